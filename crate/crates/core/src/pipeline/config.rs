//! Pipeline configuration file (TOML). Unknown keys are rejected.
//!
//! ```toml
//! seed = 42
//!
//! [paths]                      # relative paths resolve against the config file
//! footprints = "footprints.csv"
//! scenes = "scenes.csv"
//! dem = "dem.asc"              # defines the working grid
//! settlement = "settlement.asc"
//! urban_mask = "urban.asc"
//! zones = "zones.asc"
//! zone_labels = "zones.csv"
//! out = "out"
//! reference = "truth.asc"              # optional reference height raster
//! reference_polygons = "buildings.csv" # optional reference footprints
//!
//! [sampling]
//! min_sensitivity = 0.9
//! min_height = 2.5
//! min_count = 3
//! ndvi_threshold = 0.5
//! vegetation_sensor = "S"      # NDVI p90 source for the RH85 fallback; L is the fallback
//!
//! [features]
//! cloud_l = 0.30
//! cloud_s = 0.20
//! glcm_levels = 32
//! window_l = 2
//! window_s = 6
//! window_r = 5
//!
//! [forest]
//! n_trees = 500
//! # mtry = 107                 # default max(1, p/3)
//! min_node = 5
//! bootstrap = true
//!
//! [subregions]
//! northern_lat = 51.6
//! radius_m = 600000.0
//! min_samples = 10
//! northern_from_latitude = true
//!
//! [validation]
//! holdout_fraction = 0.2
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::feature_engine::{CloudLimits, Sensor, StackParams};
use crate::gedi_sampler::SamplingRules;
use crate::rf_regressor::ForestParams;
use crate::subregion_mapper::{MIN_ZONE_SAMPLES, NORTHERN_LAT_LIMIT, NORTHERN_RADIUS_M};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub subregions: SubregionConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub footprints: PathBuf,
    pub scenes: PathBuf,
    pub dem: PathBuf,
    pub settlement: PathBuf,
    pub urban_mask: PathBuf,
    pub zones: PathBuf,
    pub zone_labels: PathBuf,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_polygons: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub min_sensitivity: f64,
    pub min_height: f64,
    pub min_count: usize,
    pub ndvi_threshold: f64,
    pub vegetation_sensor: String,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let r = SamplingRules::default();
        Self {
            min_sensitivity: r.min_sensitivity,
            min_height: r.min_height,
            min_count: r.min_count,
            ndvi_threshold: r.ndvi_threshold,
            vegetation_sensor: "S".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub cloud_l: f64,
    pub cloud_s: f64,
    pub glcm_levels: usize,
    pub window_l: usize,
    pub window_s: usize,
    pub window_r: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        let c = CloudLimits::default();
        let s = StackParams::default();
        Self {
            cloud_l: c.optical_l,
            cloud_s: c.optical_s,
            glcm_levels: s.levels,
            window_l: s.window_l,
            window_s: s.window_s,
            window_r: s.window_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtry: Option<usize>,
    pub min_node: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        let f = ForestParams::with_seed(0);
        Self {
            n_trees: f.n_trees,
            mtry: f.mtry,
            min_node: f.min_node,
            bootstrap: f.bootstrap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubregionConfig {
    pub northern_lat: f64,
    pub radius_m: f64,
    pub min_samples: usize,
    /// Also treat zones lying mostly north of `northern_lat` as northern,
    /// in addition to those flagged in the label table.
    pub northern_from_latitude: bool,
}

impl Default for SubregionConfig {
    fn default() -> Self {
        Self {
            northern_lat: NORTHERN_LAT_LIMIT,
            radius_m: NORTHERN_RADIUS_M,
            min_samples: MIN_ZONE_SAMPLES,
            northern_from_latitude: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    /// Share of sample cells withheld from training for validation.
    pub holdout_fraction: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { holdout_fraction: 0.2 }
    }
}

impl PipelineConfig {
    /// Parses and validates; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.paths.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let s = &self.sampling;
        if !(0.0..=1.0).contains(&s.min_sensitivity) {
            return bad(format!("sampling.min_sensitivity {} outside [0, 1]", s.min_sensitivity));
        }
        if !s.min_height.is_finite() {
            return bad("sampling.min_height must be finite".into());
        }
        if s.min_count == 0 {
            return bad("sampling.min_count must be at least 1".into());
        }
        if !s.ndvi_threshold.is_finite() {
            return bad("sampling.ndvi_threshold must be finite".into());
        }
        match Sensor::parse(&s.vegetation_sensor) {
            Some(x) if x.is_optical() => {}
            _ => return bad(format!("sampling.vegetation_sensor must be L or S, got {:?}", s.vegetation_sensor)),
        }
        let f = &self.features;
        for (name, v) in [("cloud_l", f.cloud_l), ("cloud_s", f.cloud_s)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("features.{name} {v} outside [0, 1]"));
            }
        }
        if f.glcm_levels < 2 {
            return bad("features.glcm_levels must be at least 2".into());
        }
        if f.window_l == 0 || f.window_s == 0 || f.window_r == 0 {
            return bad("features windows must be at least 1".into());
        }
        let t = &self.forest;
        if t.n_trees == 0 || t.min_node == 0 || t.mtry == Some(0) {
            return bad("forest.n_trees, forest.min_node and forest.mtry must be positive".into());
        }
        let r = &self.subregions;
        if !(r.radius_m >= 0.0 && r.radius_m.is_finite()) {
            return bad(format!("subregions.radius_m {} must be a non-negative distance", r.radius_m));
        }
        if !(-90.0..=90.0).contains(&r.northern_lat) {
            return bad(format!("subregions.northern_lat {} outside [-90, 90]", r.northern_lat));
        }
        let h = self.validation.holdout_fraction;
        if !(0.0..1.0).contains(&h) {
            return bad(format!("validation.holdout_fraction {h} outside [0, 1)"));
        }
        Ok(())
    }

    pub fn sampling_rules(&self) -> SamplingRules {
        SamplingRules {
            min_sensitivity: self.sampling.min_sensitivity,
            min_height: self.sampling.min_height,
            min_count: self.sampling.min_count,
            ndvi_threshold: self.sampling.ndvi_threshold,
        }
    }

    pub fn vegetation_sensor(&self) -> Sensor {
        Sensor::parse(&self.sampling.vegetation_sensor).expect("validated")
    }

    pub fn cloud_limits(&self) -> CloudLimits {
        CloudLimits {
            optical_l: self.features.cloud_l,
            optical_s: self.features.cloud_s,
        }
    }

    pub fn stack_params(&self) -> StackParams {
        StackParams {
            levels: self.features.glcm_levels,
            window_l: self.features.window_l,
            window_s: self.features.window_s,
            window_r: self.features.window_r,
        }
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.forest.n_trees,
            mtry: self.forest.mtry,
            min_node: self.forest.min_node,
            bootstrap: self.forest.bootstrap,
            seed: self.seed,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.footprints,
            &mut self.scenes,
            &mut self.dem,
            &mut self.settlement,
            &mut self.urban_mask,
            &mut self.zones,
            &mut self.zone_labels,
            &mut self.out,
        ] {
            fix(p);
        }
        if let Some(p) = &mut self.reference {
            fix(p);
        }
        if let Some(p) = &mut self.reference_polygons {
            fix(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
footprints = "fp.csv"
scenes = "scenes.csv"
dem = "dem.asc"
settlement = "settlement.asc"
urban_mask = "urban.asc"
zones = "zones.asc"
zone_labels = "zones.csv"
out = "out"
"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = PipelineConfig::parse(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.paths.dem, PathBuf::from("/data/dem.asc"));
        assert_eq!(cfg.sampling_rules(), SamplingRules::default());
        assert_eq!(cfg.cloud_limits(), CloudLimits::default());
        assert_eq!(cfg.stack_params(), StackParams::default());
        assert_eq!(cfg.forest_params(), ForestParams::with_seed(0));
        assert_eq!(cfg.subregions.radius_m, 600_000.0);
        assert_eq!(cfg.subregions.northern_lat, 51.6);
        assert_eq!(cfg.validation.holdout_fraction, 0.2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[forest]\nn_tree = 10\n");
        assert!(matches!(PipelineConfig::parse(&text, Path::new("")), Err(PipelineError::Config(_))));
        let text = format!("colour = 1\n{MINIMAL}");
        assert!(PipelineConfig::parse(&text, Path::new("")).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for extra in [
            "[sampling]\nmin_count = 0",
            "[sampling]\nvegetation_sensor = \"R\"",
            "[features]\nglcm_levels = 1",
            "[forest]\nn_trees = 0",
            "[validation]\nholdout_fraction = 1.0",
            "[subregions]\nradius_m = -1.0",
        ] {
            let text = format!("{MINIMAL}\n{extra}\n");
            assert!(PipelineConfig::parse(&text, Path::new("")).is_err(), "{extra}");
        }
    }

    #[test]
    fn serialization_round_trip() {
        let mut cfg = PipelineConfig::parse(MINIMAL, Path::new("")).unwrap();
        cfg.forest.mtry = Some(12);
        cfg.paths.reference = Some("truth.asc".into());
        let back = PipelineConfig::parse(&cfg.to_toml(), Path::new("")).unwrap();
        assert_eq!(back, cfg);
    }
}
