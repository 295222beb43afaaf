use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::glcm::{glcm_features, GlcmParams, DEFAULT_LEVELS};
use super::indices::{spectral_index, SpectralIndex};
use super::scene::{BandRole, Scene, Sensor};
use super::temporal::{temporal_stats_rasters, Stat, OPTICAL_STATS, RADAR_STATS};
use super::terrain::terrain_features;
use super::FeatureError;
use crate::geo_grid::{read_ascii_grid, write_ascii_grid, GridSpec, Raster};

/// Number of explanatory variables in a complete stack.
pub const FEATURE_COUNT: usize = 323;
pub const OPTICAL_BANDS_PER_SENSOR: usize = 125;
pub const RADAR_BANDS: usize = 70;
pub const TERRAIN_BANDS: usize = 3;

/// Manifest listing band names, one per line, in stack order.
pub const MANIFEST_FILE: &str = "manifest.txt";

const TEXTURE_SUFFIXES: [&str; 4] = ["glcmmean", "glcmvar", "contrast", "dissim"];
const RADAR_ROLES: [BandRole; 2] = [BandRole::Vv, BandRole::Vh];

fn stat_names(prefix: &str, stats: &[Stat]) -> Vec<String> {
    stats.iter().map(|s| format!("{prefix}_{}", s.name())).collect()
}

fn sensor_block_names(sensor: Sensor) -> Vec<String> {
    let (layers, stats): (Vec<&str>, &[Stat]) = match sensor {
        Sensor::Radar => (RADAR_ROLES.iter().map(|r| r.name()).collect(), &RADAR_STATS),
        _ => (SpectralIndex::ALL.iter().map(|i| i.name()).collect(), &OPTICAL_STATS),
    };
    let stat_bands: Vec<String> = layers
        .iter()
        .flat_map(|l| stat_names(&format!("{}_{l}", sensor.tag()), stats))
        .collect();
    let textures: Vec<String> = stat_bands
        .iter()
        .flat_map(|b| TEXTURE_SUFFIXES.iter().map(move |t| format!("{b}_{t}")))
        .collect();
    stat_bands.into_iter().chain(textures).collect()
}

/// The 323 band names in stack order: the 30 m optical block, the 10 m
/// optical block, radar, then terrain. Within a sensor block all
/// statistic bands come first (layer-major, statistic-minor), followed
/// by the four textures of each statistic band in the same order.
pub fn canonical_band_names() -> Vec<String> {
    let mut names = sensor_block_names(Sensor::OpticalL);
    names.extend(sensor_block_names(Sensor::OpticalS));
    names.extend(sensor_block_names(Sensor::Radar));
    names.extend(["T_elev", "T_slope", "T_aspect"].map(String::from));
    names
}

/// Ordered, uniquely named bands on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    spec: GridSpec,
    names: Vec<String>,
    bands: Vec<Raster>,
}

impl FeatureStack {
    pub fn new(names: Vec<String>, bands: Vec<Raster>) -> Result<Self, FeatureError> {
        if names.len() != bands.len() {
            return Err(FeatureError::InvalidStack(format!(
                "{} names for {} bands",
                names.len(),
                bands.len()
            )));
        }
        let Some(first) = bands.first() else {
            return Err(FeatureError::InvalidStack("stack has no bands".into()));
        };
        let spec = *first.spec();
        if bands.iter().any(|b| *b.spec() != spec) {
            return Err(FeatureError::GridMismatch("stack bands differ in grid".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(FeatureError::InvalidStack(format!("duplicate band name {dup}")));
        }
        Ok(Self { spec, names, bands })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bands(&self) -> &[Raster] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn band(&self, name: &str) -> Option<&Raster> {
        self.names.iter().position(|n| n == name).map(|i| &self.bands[i])
    }

    pub fn is_canonical(&self) -> bool {
        self.names == canonical_band_names()
    }

    /// Fills `out` with the feature row of cell `index`; `false` if any band
    /// is nodata there.
    pub fn row_into(&self, index: usize, out: &mut Vec<f64>) -> bool {
        out.clear();
        for b in &self.bands {
            match b.valid_at(index) {
                Some(v) => out.push(v),
                None => return false,
            }
        }
        true
    }

    pub fn row(&self, index: usize) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        self.row_into(index, &mut out).then_some(out)
    }

    /// Writes `manifest.txt` and one `<name>.asc` per band into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), FeatureError> {
        fs::create_dir_all(dir).map_err(|e| FeatureError::Io(format!("{}: {e}", dir.display())))?;
        let manifest = self.names.iter().map(|n| format!("{n}\n")).collect::<String>();
        fs::write(dir.join(MANIFEST_FILE), manifest)
            .map_err(|e| FeatureError::Io(format!("{}: {e}", dir.display())))?;
        self.names
            .par_iter()
            .zip(&self.bands)
            .try_for_each(|(name, band)| {
                write_ascii_grid(band, dir.join(format!("{name}.asc")))
                    .map_err(|e| FeatureError::Io(e.to_string()))
            })
    }

    pub fn read(dir: &Path) -> Result<Self, FeatureError> {
        let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))
            .map_err(|e| FeatureError::Io(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
        let names: Vec<String> = manifest.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect();
        let bands = names
            .par_iter()
            .map(|n| read_ascii_grid(dir.join(format!("{n}.asc"))).map_err(|e| FeatureError::Io(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(names, bands)
    }
}

/// Texture window and grey levels per sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackParams {
    pub levels: usize,
    pub window_l: usize,
    pub window_s: usize,
    pub window_r: usize,
}

impl Default for StackParams {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS,
            window_l: 2,
            window_s: 6,
            window_r: 5,
        }
    }
}

impl StackParams {
    fn window(&self, sensor: Sensor) -> usize {
        match sensor {
            Sensor::OpticalL => self.window_l,
            Sensor::OpticalS => self.window_s,
            Sensor::Radar => self.window_r,
        }
    }
}

fn check_scenes(scenes: &[Scene], sensor: Sensor, spec: &GridSpec) -> Result<(), FeatureError> {
    for s in scenes {
        if s.sensor() != sensor {
            return Err(FeatureError::Usage(format!(
                "{} scene of {} passed as {sensor}",
                s.sensor(),
                s.acquired()
            )));
        }
        if s.spec() != spec {
            return Err(FeatureError::GridMismatch(format!(
                "{sensor} scene of {} is not on the DEM grid",
                s.acquired()
            )));
        }
    }
    Ok(())
}

/// Temporal statistic bands of one layer across scenes; all nodata when
/// there are no scenes.
fn layer_stats(layers: Vec<Raster>, stats: &[Stat], spec: &GridSpec, nodata: f64) -> Result<Vec<Raster>, FeatureError> {
    if layers.is_empty() {
        return Ok(vec![Raster::nodata_like(*spec, nodata); stats.len()]);
    }
    temporal_stats_rasters(&layers, stats)
}

/// Per-pixel time series of one optical index, masked pixels excluded.
pub fn index_stat_bands(scenes: &[Scene], index: SpectralIndex, stats: &[Stat], spec: &GridSpec, nodata: f64) -> Result<Vec<Raster>, FeatureError> {
    let layers = scenes
        .par_iter()
        .map(|s| spectral_index(s, index))
        .collect::<Result<Vec<_>, _>>()?;
    layer_stats(layers, stats, spec, nodata)
}

fn radar_layer(scene: &Scene, role: BandRole) -> Raster {
    let spec = *scene.spec();
    let band = scene.band(role).expect("validated radar scene");
    let values = (0..spec.len())
        .map(|i| scene.value(role, i).unwrap_or(band.nodata()))
        .collect();
    Raster::new(spec, values, band.nodata()).expect("same grid")
}

fn sensor_block(scenes: &[Scene], sensor: Sensor, spec: &GridSpec, nodata: f64, params: &StackParams) -> Result<Vec<Raster>, FeatureError> {
    let stat_bands: Vec<Raster> = if sensor == Sensor::Radar {
        RADAR_ROLES
            .par_iter()
            .map(|role| {
                let layers = scenes.iter().map(|s| radar_layer(s, *role)).collect();
                layer_stats(layers, &RADAR_STATS, spec, nodata)
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        SpectralIndex::ALL
            .par_iter()
            .map(|idx| index_stat_bands(scenes, *idx, &OPTICAL_STATS, spec, nodata))
            .collect::<Result<Vec<_>, _>>()?
    }
    .into_iter()
    .flatten()
    .collect();

    let glcm = GlcmParams::new(params.window(sensor), params.levels);
    let textures = stat_bands
        .par_iter()
        .map(|b| glcm_features(b, &glcm).map(|f| [f.mean, f.variance, f.contrast, f.dissimilarity]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(stat_bands.into_iter().chain(textures.into_iter().flatten()).collect())
}

/// Builds the complete 323-band stack. Scenes are expected to be
/// cloud-filtered already and to share the DEM's grid.
pub fn assemble_feature_stack(
    optical_l: &[Scene],
    optical_s: &[Scene],
    radar: &[Scene],
    dem: &Raster,
    params: &StackParams,
) -> Result<FeatureStack, FeatureError> {
    let spec = dem.spec();
    check_scenes(optical_l, Sensor::OpticalL, spec)?;
    check_scenes(optical_s, Sensor::OpticalS, spec)?;
    check_scenes(radar, Sensor::Radar, spec)?;
    let nodata = dem.nodata();

    let mut bands = Vec::with_capacity(FEATURE_COUNT);
    bands.extend(sensor_block(optical_l, Sensor::OpticalL, spec, nodata, params)?);
    bands.extend(sensor_block(optical_s, Sensor::OpticalS, spec, nodata, params)?);
    bands.extend(sensor_block(radar, Sensor::Radar, spec, nodata, params)?);
    let t = terrain_features(dem);
    bands.extend([t.elevation, t.slope, t.aspect]);
    // index rasters inherit their scene's nodata; normalize to the DEM's
    let bands = bands
        .into_iter()
        .map(|b| {
            if b.nodata() == nodata {
                b
            } else {
                let values = b.values().iter().map(|&v| if b.is_valid_value(v) { v } else { nodata }).collect();
                Raster::new(*spec, values, nodata).expect("same grid")
            }
        })
        .collect();
    FeatureStack::new(canonical_band_names(), bands)
}
