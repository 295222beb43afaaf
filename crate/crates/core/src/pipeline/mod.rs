//! End-to-end orchestration: sample, features, train, map, validate.
//!
//! Every stage reads its inputs from the configured paths or from earlier
//! stages' outputs under the output directory, so running the stages one
//! by one produces the same files as a full run. While a stage or a full
//! run is in progress the output directory holds a `.partial` marker; it
//! is left behind when something fails.

pub mod config;
pub mod synth;

pub use config::PipelineConfig;
pub use synth::{generate_synthetic_scene, load_synth_params, write_synthetic, SynthParams, SyntheticScene, SyntheticTruth};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::feature_engine::{
    assemble_feature_stack, index_stat_bands, read_scene_manifest, scene_filter_with, FeatureStack, Scene, Sensor,
    SpectralIndex, Stat,
};
use crate::gedi_sampler::{build_samples_with, read_footprints, read_samples, write_samples, HeightSample};
use crate::geo_grid::{read_ascii_grid, write_ascii_grid, Raster};
use crate::rf_regressor::{read_model, write_model, ForestModel};
use crate::subregion_mapper::{
    assign_subregion, map_heights, northern_training_sets, read_partition, train_zone_models, SubregionPartition, UrbanMask,
};
use crate::validator::{
    area_weighted_reference, compare_products, downscale_raster, read_polygons, write_reports, ValidationReport, OVERALL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Sample,
    Features,
    Train,
    Map,
    Validate,
    Compare,
}

impl Stage {
    /// Stages of a full run, in order.
    pub const RUN: [Stage; 5] = [Stage::Sample, Stage::Features, Stage::Train, Stage::Map, Stage::Validate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Sample => "sample",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Map => "map",
            Stage::Validate => "validate",
            Stage::Compare => "compare",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
        }
    }
}

fn fail(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

trait StageResult<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: fmt::Display> StageResult<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| fail(stage)(e.to_string()))
    }
}

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct OutLayout {
    pub root: PathBuf,
}

pub const PARTIAL_MARKER: &str = ".partial";

impl OutLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn samples(&self) -> PathBuf {
        self.root.join("samples.csv")
    }
    pub fn samples_train(&self) -> PathBuf {
        self.root.join("samples_train.csv")
    }
    pub fn samples_holdout(&self) -> PathBuf {
        self.root.join("samples_holdout.csv")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn model(&self, zone: u32) -> PathBuf {
        self.models().join(format!("zone_{zone}.model"))
    }
    pub fn height_map(&self) -> PathBuf {
        self.root.join("height_map.asc")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn stage_log(&self, stage: Stage) -> PathBuf {
        self.logs().join(format!("{stage}.log"))
    }
    pub fn run_log(&self) -> PathBuf {
        self.root.join("run_log.txt")
    }
    pub fn marker(&self) -> PathBuf {
        self.root.join(PARTIAL_MARKER)
    }
}

/// Lines of `key value` tallies written to a stage's log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageLog {
    lines: Vec<String>,
}

impl StageLog {
    fn add(&mut self, key: &str, value: impl fmt::Display) {
        log::info!("{key}: {value}");
        self.lines.push(format!("{key} {value}"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    /// Value recorded under `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find_map(|l| l.strip_prefix(key)?.strip_prefix(' '))
    }
}

fn with_marker<T>(out: &OutLayout, label: &str, f: impl FnOnce() -> Result<T, PipelineError>) -> Result<T, PipelineError> {
    fs::create_dir_all(&out.root).map_err(|e| PipelineError::Config(format!("{}: {e}", out.root.display())))?;
    fs::write(out.marker(), format!("{label}\n")).map_err(|e| PipelineError::Config(format!("{}: {e}", out.root.display())))?;
    let value = f()?;
    fs::remove_file(out.marker()).map_err(|e| PipelineError::Config(format!("{}: {e}", out.root.display())))?;
    Ok(value)
}

/// Runs one stage of the pipeline.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageLog, PipelineError> {
    let out = OutLayout::new(&cfg.paths.out);
    with_marker(&out, stage.name(), || stage_body(cfg, &out, stage))
}

/// Runs every stage in order and writes `run_log.txt`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<(Stage, StageLog)>, PipelineError> {
    let out = OutLayout::new(&cfg.paths.out);
    with_marker(&out, "run", || {
        let mut logs = Vec::new();
        let mut text = String::new();
        for stage in Stage::RUN {
            log::info!("stage {stage}");
            let log = stage_body(cfg, &out, stage)?;
            text.push_str(&format!("[{stage}]\n"));
            for l in log.lines() {
                text.push_str(l);
                text.push('\n');
            }
            logs.push((stage, log));
        }
        fs::write(out.run_log(), text).at(Stage::Validate)?;
        Ok(logs)
    })
}

fn stage_body(cfg: &PipelineConfig, out: &OutLayout, stage: Stage) -> Result<StageLog, PipelineError> {
    let log = match stage {
        Stage::Sample => sample_stage(cfg, out),
        Stage::Features => features_stage(cfg, out),
        Stage::Train => train_stage(cfg, out),
        Stage::Map => map_stage(cfg, out),
        Stage::Validate => validate_stage(cfg, out),
        Stage::Synth | Stage::Compare => Err(PipelineError::Config(format!("{stage} is not a pipeline stage"))),
    }?;
    fs::create_dir_all(out.logs()).at(stage)?;
    let text: String = log.lines().iter().map(|l| format!("{l}\n")).collect();
    fs::write(out.stage_log(stage), text).at(stage)?;
    Ok(log)
}

fn read_grid(path: &Path, stage: Stage) -> Result<Raster, PipelineError> {
    read_ascii_grid(path).at(stage)
}

fn load_scenes(cfg: &PipelineConfig, stage: Stage, log: &mut StageLog) -> Result<Vec<Scene>, PipelineError> {
    let all = read_scene_manifest(&cfg.paths.scenes).at(stage)?;
    let total = all.len();
    let kept = scene_filter_with(all, cfg.cloud_limits());
    log.add("scenes_input", total);
    log.add("scenes_cloudy", total - kept.len());
    for sensor in [Sensor::OpticalL, Sensor::OpticalS, Sensor::Radar] {
        log.add(&format!("scenes_{sensor}"), kept.iter().filter(|s| s.sensor() == sensor).count());
    }
    Ok(kept)
}

fn load_partition(cfg: &PipelineConfig, stage: Stage) -> Result<SubregionPartition, PipelineError> {
    let part = read_partition(&cfg.paths.zones, &cfg.paths.zone_labels).at(stage)?;
    if cfg.subregions.northern_from_latitude {
        part.with_northern_by_latitude(cfg.subregions.northern_lat).at(stage)
    } else {
        Ok(part)
    }
}

fn sample_stage(cfg: &PipelineConfig, out: &OutLayout) -> Result<StageLog, PipelineError> {
    let st = Stage::Sample;
    let mut log = StageLog::default();
    let footprints = read_footprints(&cfg.paths.footprints).at(st)?;
    let settlement = read_grid(&cfg.paths.settlement, st)?;
    let dem = read_grid(&cfg.paths.dem, st)?;
    if !settlement.spec().is_compatible(dem.spec()) {
        return Err(fail(st)("settlement mask is not on the DEM grid".into()));
    }
    let scenes = load_scenes(cfg, st, &mut log)?;
    let preferred = cfg.vegetation_sensor();
    let other = if preferred == Sensor::OpticalS { Sensor::OpticalL } else { Sensor::OpticalS };
    let pick = |s: Sensor| scenes.iter().filter(|x| x.sensor() == s).cloned().collect::<Vec<_>>();
    let mut veg = pick(preferred);
    let mut source = preferred.tag();
    if veg.is_empty() {
        veg = pick(other);
        source = other.tag();
    }
    let ndvi = if veg.is_empty() {
        source = "none";
        None
    } else {
        index_stat_bands(&veg, SpectralIndex::Ndvi, &[Stat::Percentile(90)], settlement.spec(), settlement.nodata())
            .at(st)?
            .pop()
    };
    log.add("vegetation_source", source);

    let (samples, funnel) = build_samples_with(&footprints, &settlement, ndvi.as_ref(), &cfg.sampling_rules()).at(st)?;
    log.add("footprints_input", funnel.input);
    log.add("dropped_quality", funnel.filter.quality);
    log.add("dropped_sensitivity", funnel.filter.sensitivity);
    log.add("dropped_degrade", funnel.filter.degrade);
    log.add("dropped_outside_grid", funnel.outside_grid);
    log.add("dropped_outside_settlement", funnel.outside_settlement);
    log.add("dropped_malformed", funnel.malformed);
    log.add("dropped_low_height", funnel.low_height);
    log.add("dropped_sparse_cells", funnel.sparse_cells);
    log.add("dropped_sparse_footprints", funnel.sparse_footprints);
    log.add("vegetated_footprints", funnel.vegetated_footprints);
    log.add("ndvi_nodata_footprints", funnel.ndvi_nodata);
    log.add("samples", funnel.samples);
    if samples.is_empty() {
        return Err(fail(st)("no samples survived the sampling rules".into()));
    }

    let (train, holdout) = split_holdout(&samples, cfg.validation.holdout_fraction, cfg.seed);
    log.add("samples_train", train.len());
    log.add("samples_holdout", holdout.len());
    fs::create_dir_all(&out.root).at(st)?;
    write_samples(out.samples(), &samples).at(st)?;
    write_samples(out.samples_train(), &train).at(st)?;
    write_samples(out.samples_holdout(), &holdout).at(st)?;
    Ok(log)
}

/// Withholds `round(fraction * n)` samples chosen by a seeded shuffle.
/// Both halves keep the input order.
pub fn split_holdout(samples: &[HeightSample], fraction: f64, seed: u64) -> (Vec<HeightSample>, Vec<HeightSample>) {
    let n = samples.len();
    let n_hold = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x686f_6c64);
    order.shuffle(&mut rng);
    let mut held = vec![false; n];
    for &i in &order[..n_hold] {
        held[i] = true;
    }
    let (mut train, mut hold) = (Vec::new(), Vec::new());
    for (s, h) in samples.iter().zip(held) {
        if h {
            hold.push(*s);
        } else {
            train.push(*s);
        }
    }
    (train, hold)
}

fn features_stage(cfg: &PipelineConfig, out: &OutLayout) -> Result<StageLog, PipelineError> {
    let st = Stage::Features;
    let mut log = StageLog::default();
    let dem = read_grid(&cfg.paths.dem, st)?;
    let scenes = load_scenes(cfg, st, &mut log)?;
    let by = |s: Sensor| scenes.iter().filter(|x| x.sensor() == s).cloned().collect::<Vec<_>>();
    let stack = assemble_feature_stack(
        &by(Sensor::OpticalL),
        &by(Sensor::OpticalS),
        &by(Sensor::Radar),
        &dem,
        &cfg.stack_params(),
    )
    .at(st)?;
    log.add("bands", stack.len());
    let complete = (0..dem.spec().len()).filter(|&i| stack.row(i).is_some()).count();
    log.add("complete_cells", complete);
    if complete == 0 {
        return Err(fail(st)("no cell has a complete feature vector".into()));
    }
    stack.write(&out.features()).at(st)?;
    Ok(log)
}

fn train_stage(cfg: &PipelineConfig, out: &OutLayout) -> Result<StageLog, PipelineError> {
    let st = Stage::Train;
    let mut log = StageLog::default();
    let samples = read_samples(out.samples_train()).at(st)?;
    let stack = FeatureStack::read(&out.features()).at(st)?;
    let part = load_partition(cfg, st)?;
    if !stack.spec().is_compatible(part.spec()) {
        return Err(fail(st)("feature stack and partition are on different grids".into()));
    }
    let assigned = assign_subregion(&samples, &part).at(st)?;
    log.add("samples_train", samples.len());
    log.add("dropped_nodata_zone", assigned.dropped);
    let mut sets = assigned.sets;
    let northern = northern_training_sets(&samples, &part, cfg.subregions.radius_m, 0).at(st)?;
    for (zone, set) in northern.sets {
        log.add(&format!("northern_zone_{zone}_samples"), set.len());
        sets.insert(zone, set);
    }
    let zm = train_zone_models(&sets, &stack, &cfg.forest_params(), cfg.subregions.min_samples).at(st)?;
    log.add("dropped_nodata_feature", zm.nodata_rows);
    for (zone, n) in &zm.untrainable {
        log.add(&format!("untrainable_zone_{zone}"), n);
    }
    if zm.models.is_empty() {
        return Err(fail(st)("no zone had enough samples to train a model".into()));
    }
    let dir = out.models();
    if dir.exists() {
        fs::remove_dir_all(&dir).at(st)?;
    }
    fs::create_dir_all(&dir).at(st)?;
    for (zone, m) in &zm.models {
        log.add(&format!("zone_{zone}_rows"), m.n_train());
        write_model(m, out.model(*zone)).at(st)?;
    }
    Ok(log)
}

/// Reads every `*.model` file in `dir`, keyed by subregion id.
pub fn read_models(dir: &Path) -> Result<BTreeMap<u32, ForestModel>, String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "model"))
        .collect();
    paths.sort();
    let mut models = BTreeMap::new();
    for p in paths {
        let m = read_model(&p).map_err(|e| e.to_string())?;
        if models.insert(m.subregion_id(), m).is_some() {
            return Err(format!("{}: duplicate model for its zone", p.display()));
        }
    }
    Ok(models)
}

fn map_stage(cfg: &PipelineConfig, out: &OutLayout) -> Result<StageLog, PipelineError> {
    let st = Stage::Map;
    let mut log = StageLog::default();
    let models = read_models(&out.models()).map_err(fail(st))?;
    let stack = FeatureStack::read(&out.features()).at(st)?;
    let mask = UrbanMask::new(read_grid(&cfg.paths.urban_mask, st)?).at(st)?;
    let part = load_partition(cfg, st)?;
    let map = map_heights(&models, &stack, &mask, &part).at(st)?;
    let masked = (0..part.spec().len()).filter(|&i| mask.contains(i)).count();
    log.add("models", models.len());
    log.add("masked_cells", masked);
    log.add("mapped_cells", map.count_valid());
    log.add("nodata_masked_cells", masked - map.count_valid());
    write_ascii_grid(&map, out.height_map()).at(st)?;
    Ok(log)
}

/// Pairs the map with sample heights, grouped by zone and overall.
fn sample_reports(map: &Raster, samples: &[HeightSample], part: &SubregionPartition) -> Result<Vec<ValidationReport>, String> {
    let spec = map.spec();
    let mut per: BTreeMap<u32, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut all_a, mut all_b) = (Vec::new(), Vec::new());
    for s in samples {
        if s.row >= spec.n_rows || s.col >= spec.n_cols {
            return Err(format!("sample cell ({}, {}) outside the map", s.row, s.col));
        }
        let i = spec.index(s.row, s.col);
        let Some(v) = map.valid_at(i) else { continue };
        if let Some(z) = part.zone_at(i) {
            let e = per.entry(z).or_default();
            e.0.push(v);
            e.1.push(s.mean_height);
        }
        all_a.push(v);
        all_b.push(s.mean_height);
    }
    let mut reports = per
        .iter()
        .map(|(z, (a, b))| ValidationReport::from_pairs(z.to_string(), a, b))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    reports.push(ValidationReport::from_pairs(OVERALL, &all_a, &all_b).map_err(|e| e.to_string())?);
    Ok(reports)
}

fn log_report(log: &mut StageLog, prefix: &str, reports: &[ValidationReport]) {
    if let Some(r) = reports.iter().find(|r| r.stratum == OVERALL) {
        log.add(&format!("{prefix}_n"), r.n);
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        log.add(&format!("{prefix}_r"), fmt(r.pearson_r));
        log.add(&format!("{prefix}_rmse"), fmt(r.rmse));
    }
}

fn validate_stage(cfg: &PipelineConfig, out: &OutLayout) -> Result<StageLog, PipelineError> {
    let st = Stage::Validate;
    let mut log = StageLog::default();
    let map = read_grid(&out.height_map(), st)?;
    let holdout = read_samples(out.samples_holdout()).at(st)?;
    let part = load_partition(cfg, st)?;
    let mask = UrbanMask::new(read_grid(&cfg.paths.urban_mask, st)?).at(st)?;
    let dir = out.reports();
    fs::create_dir_all(&dir).at(st)?;

    let reports = sample_reports(&map, &holdout, &part).map_err(fail(st))?;
    write_reports(&reports, dir.join("holdout_samples.csv")).at(st)?;
    log_report(&mut log, "holdout_samples", &reports);

    if let Some(path) = &cfg.paths.reference {
        let reference = read_grid(path, st)?;
        if reference.spec().is_compatible(map.spec()) {
            let cells: Vec<HeightSample> = holdout
                .iter()
                .filter_map(|s| {
                    reference.valid(s.row, s.col).map(|h| HeightSample {
                        mean_height: h,
                        ..*s
                    })
                })
                .collect();
            let reports = sample_reports(&map, &cells, &part).map_err(fail(st))?;
            write_reports(&reports, dir.join("holdout_reference.csv")).at(st)?;
            log_report(&mut log, "holdout_reference", &reports);
            let cmp = compare_products(&map, &reference, Some(&mask), Some(part.zones())).at(st)?;
            write_reports(&cmp.reports, dir.join("reference.csv")).at(st)?;
            write_ascii_grid(&cmp.difference, dir.join("reference_difference.asc")).at(st)?;
            log_report(&mut log, "reference", &cmp.reports);
        } else {
            // a coarser reference product: bring the map to its grid
            let coarse = downscale_raster(&map, reference.spec()).at(st)?;
            let cmp = compare_products(&coarse, &reference, None, None).at(st)?;
            write_reports(&cmp.reports, dir.join("reference.csv")).at(st)?;
            write_ascii_grid(&cmp.difference, dir.join("reference_difference.asc")).at(st)?;
            log_report(&mut log, "reference", &cmp.reports);
        }
    }

    if let Some(path) = &cfg.paths.reference_polygons {
        let polys = read_polygons(path).at(st)?;
        let aw = area_weighted_reference(&polys, map.spec(), map.nodata());
        log.add("polygons", polys.len());
        log.add("polygons_degenerate", aw.degenerate);
        let cmp = compare_products(&map, &aw.heights, Some(&mask), Some(part.zones())).at(st)?;
        write_reports(&cmp.reports, dir.join("polygons.csv")).at(st)?;
        write_ascii_grid(&aw.heights, dir.join("polygons_reference.asc")).at(st)?;
        log_report(&mut log, "polygons", &cmp.reports);
    }
    Ok(log)
}

/// Compares two rasters, downscaling the finer one when their grids
/// differ, and writes `report.csv` and `difference.asc` into `out`.
pub fn compare_files(
    a: &Path,
    b: &Path,
    mask: Option<&Path>,
    strata: Option<&Path>,
    out: &Path,
) -> Result<Vec<ValidationReport>, PipelineError> {
    let st = Stage::Compare;
    let mut a = read_grid(a, st)?;
    let mut b = read_grid(b, st)?;
    if !a.spec().is_compatible(b.spec()) {
        if a.spec().cell_size < b.spec().cell_size {
            a = downscale_raster(&a, b.spec()).at(st)?;
        } else {
            b = downscale_raster(&b, a.spec()).at(st)?;
        }
    }
    let mask = match mask {
        Some(p) => Some(UrbanMask::new(read_grid(p, st)?).at(st)?),
        None => None,
    };
    let strata = match strata {
        Some(p) => Some(read_grid(p, st)?),
        None => None,
    };
    let cmp = compare_products(&a, &b, mask.as_ref(), strata.as_ref()).at(st)?;
    fs::create_dir_all(out).at(st)?;
    write_reports(&cmp.reports, out.join("report.csv")).at(st)?;
    write_ascii_grid(&cmp.difference, out.join("difference.asc")).at(st)?;
    Ok(cmp.reports)
}
