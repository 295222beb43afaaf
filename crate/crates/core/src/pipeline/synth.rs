//! Synthetic city with known building heights, for end-to-end testing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{FeatureConfig, ForestConfig, Paths, PipelineConfig, SamplingConfig, SubregionConfig, ValidationConfig};
use super::PipelineError;
use crate::feature_engine::{write_scene_manifest, BandRole, Scene, Sensor};
use crate::gedi_sampler::{write_footprints, Footprint};
use crate::geo_grid::{mollweide_forward, mollweide_inverse, write_ascii_grid, GeoPoint, GridSpec, Raster, DEFAULT_NODATA};
use crate::subregion_mapper::{write_partition, SubregionPartition, ZoneLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub n_rows: usize,
    pub n_cols: usize,
    pub cell_size: f64,
    /// Grid origin, snapped down to whole cells in projected metres.
    pub origin_lon: f64,
    pub origin_lat: f64,
    /// Rectangular blocks of uniform height; later blocks overwrite.
    pub n_buildings: usize,
    pub block_min: usize,
    pub block_max: usize,
    pub height_min: f64,
    pub height_max: f64,
    /// Footprints per settlement cell, plus up to `extra_footprints` more.
    pub footprints_per_cell: usize,
    pub extra_footprints: usize,
    /// Gaussian noise on footprint heights, metres.
    pub noise_sigma: f64,
    pub n_scenes: usize,
    /// Cloud rectangles masked in each optical scene.
    pub cloud_patches: usize,
    /// Reflectance noise; radar backscatter noise is 100 times this in dB.
    pub band_noise: f64,
    pub quality_fail: f64,
    pub sensitivity_fail: f64,
    pub degrade_fail: f64,
    /// Settlement footprints that hit the ground (below the height cut).
    pub ground_fraction: f64,
    /// Settlement cells with tree cover, where RH95 overshoots the roofs.
    pub green_fraction: f64,
    /// Chance of a stray footprint on each non-settlement cell.
    pub stray_rate: f64,
    /// Zones are a `zone_rows` x `zone_cols` tiling of the grid.
    pub zone_rows: usize,
    pub zone_cols: usize,
    /// Forest size written into the generated pipeline config.
    pub n_trees: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_rows: 96,
            n_cols: 96,
            cell_size: 150.0,
            origin_lon: 10.0,
            origin_lat: 45.0,
            n_buildings: 70,
            block_min: 3,
            block_max: 12,
            height_min: 3.0,
            height_max: 45.0,
            footprints_per_cell: 3,
            extra_footprints: 3,
            noise_sigma: 2.0,
            n_scenes: 4,
            cloud_patches: 2,
            band_noise: 0.005,
            quality_fail: 0.04,
            sensitivity_fail: 0.04,
            degrade_fail: 0.04,
            ground_fraction: 0.03,
            green_fraction: 0.1,
            stray_rate: 0.1,
            zone_rows: 2,
            zone_cols: 2,
            n_trees: 100,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(format!("synthetic parameters: {m}")));
        if self.n_rows == 0 || self.n_cols == 0 || !(self.cell_size > 0.0) {
            return bad("grid must be non-empty with a positive cell size");
        }
        if self.block_min == 0 || self.block_min > self.block_max {
            return bad("block sizes must satisfy 1 <= block_min <= block_max");
        }
        if !(self.height_min > 0.0 && self.height_min < self.height_max) {
            return bad("heights must satisfy 0 < height_min < height_max");
        }
        if !(self.noise_sigma >= 0.0 && self.band_noise >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        let fails = self.quality_fail + self.sensitivity_fail + self.degrade_fail;
        for v in [self.quality_fail, self.sensitivity_fail, self.degrade_fail, self.ground_fraction, self.green_fraction, self.stray_rate] {
            if !(0.0..=1.0).contains(&v) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        if fails > 1.0 {
            return bad("filter failure fractions sum past 1");
        }
        if self.zone_rows == 0 || self.zone_cols == 0 || self.zone_rows > self.n_rows || self.zone_cols > self.n_cols {
            return bad("zone tiling must fit the grid");
        }
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        Ok(())
    }
}

/// The generated truth and the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub heights: Raster,
    pub params: SynthParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub truth: SyntheticTruth,
    pub settlement: Raster,
    pub urban_mask: Raster,
    pub green: Raster,
    pub footprints: Vec<Footprint>,
    pub scenes: Vec<Scene>,
    pub dem: Raster,
    pub partition: SubregionPartition,
    /// Block outlines in projected metres with their heights.
    pub blocks: Vec<(f64, f64, f64, f64, f64)>,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

pub fn generate_synthetic_scene(seed: u64, params: &SynthParams) -> Result<SyntheticScene, PipelineError> {
    params.validate()?;
    let p = params;
    let cs = p.cell_size;
    let anchor = GeoPoint::new(p.origin_lon, p.origin_lat).map_err(|e| PipelineError::Config(e.to_string()))?;
    let (x0, y0) = mollweide_forward(anchor, crate::geo_grid::DEFAULT_SPHERE_RADIUS)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let spec = GridSpec::new((x0 / cs).floor() * cs, (y0 / cs).floor() * cs, cs, p.n_rows, p.n_cols)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let nd = DEFAULT_NODATA;

    // truth blocks
    let mut rng = stream(seed, 1);
    let mut heights = Raster::nodata_like(spec, nd);
    let mut blocks = Vec::with_capacity(p.n_buildings);
    for _ in 0..p.n_buildings {
        let bh = rng.gen_range(p.block_min..=p.block_max).min(p.n_rows);
        let bw = rng.gen_range(p.block_min..=p.block_max).min(p.n_cols);
        let r0 = rng.gen_range(0..=p.n_rows - bh);
        let c0 = rng.gen_range(0..=p.n_cols - bw);
        let h = rng.gen_range(p.height_min..p.height_max);
        for r in r0..r0 + bh {
            for c in c0..c0 + bw {
                heights.set(r, c, h);
            }
        }
        blocks.push((
            spec.origin_x + c0 as f64 * cs,
            spec.origin_y - (r0 + bh) as f64 * cs,
            spec.origin_x + (c0 + bw) as f64 * cs,
            spec.origin_y - r0 as f64 * cs,
            h,
        ));
    }
    let settlement = heights.map_valid(|_| 1.0);
    let urban_mask = settlement.clone();
    let green = Raster::from_fn(spec, nd, |r, c| {
        let g = rng.gen_bool(p.green_fraction);
        if heights.valid(r, c).is_some() && g {
            1.0
        } else {
            0.0
        }
    });

    let footprints = footprints(seed, p, &spec, &heights, &green)?;
    let scenes = scenes(seed, p, &spec, &heights, &green)?;

    // a flat base tilted by a gentle ramp, so no cell is level
    let dem = Raster::from_fn(spec, nd, |r, c| 100.0 + 2.0 * c as f64 + 0.5 * r as f64);

    let zone_of = |r: usize, c: usize| (r * p.zone_rows / p.n_rows) * p.zone_cols + c * p.zone_cols / p.n_cols + 1;
    let zones = Raster::from_fn(spec, nd, |r, c| zone_of(r, c) as f64);
    const CLIMATES: [&str; 4] = ["Cfa", "Cfb", "Dfa", "Dfb"];
    let labels: BTreeMap<u32, ZoneLabel> = (0..p.zone_rows * p.zone_cols)
        .map(|k| {
            (
                k as u32 + 1,
                ZoneLabel {
                    admin: format!("region{}", k / p.zone_cols + 1),
                    climate: CLIMATES[k % CLIMATES.len()].to_string(),
                },
            )
        })
        .collect();
    let partition = SubregionPartition::new(zones, labels, BTreeSet::new()).map_err(|e| PipelineError::Config(e.to_string()))?;

    Ok(SyntheticScene {
        truth: SyntheticTruth {
            heights,
            params: params.clone(),
            seed,
        },
        settlement,
        urban_mask,
        green,
        footprints,
        scenes,
        dem,
        partition,
        blocks,
    })
}

fn footprints(seed: u64, p: &SynthParams, spec: &GridSpec, heights: &Raster, green: &Raster) -> Result<Vec<Footprint>, PipelineError> {
    let mut rng = stream(seed, 2);
    let noise = Normal::new(0.0, p.noise_sigma).expect("validated sigma");
    let first_day = NaiveDate::from_ymd_opt(2019, 4, 18).expect("valid date");
    let mut out = Vec::new();
    for r in 0..spec.n_rows {
        for c in 0..spec.n_cols {
            let truth = heights.valid(r, c);
            let n = match truth {
                Some(_) => p.footprints_per_cell + rng.gen_range(0..=p.extra_footprints),
                None => usize::from(rng.gen_bool(p.stray_rate)),
            };
            let left = spec.origin_x + c as f64 * spec.cell_size;
            let top = spec.origin_y - r as f64 * spec.cell_size;
            for _ in 0..n {
                // stay clear of cell edges so the projected round trip lands in this cell
                let x = left + spec.cell_size * rng.gen_range(0.1..0.9);
                let y = top - spec.cell_size * rng.gen_range(0.1..0.9);
                let point = mollweide_inverse(x, y, spec.sphere_radius).map_err(|e| PipelineError::Config(e.to_string()))?;
                let (rh85, rh95) = match truth {
                    Some(_) if rng.gen_bool(p.ground_fraction) => {
                        let g = rng.gen_range(0.3..2.4);
                        (0.8 * g, g)
                    }
                    Some(h) if green.get(r, c) == 1.0 => {
                        let roof = h + noise.sample(&mut rng);
                        (roof, roof + rng.gen_range(2.0..6.0))
                    }
                    Some(h) => {
                        let top = h + noise.sample(&mut rng);
                        (top - rng.gen_range(0.5..2.0), top)
                    }
                    None => {
                        let v = rng.gen_range(0.5..6.0);
                        (0.7 * v, v)
                    }
                };
                let u: f64 = rng.gen();
                let (mut quality_flag, mut sensitivity, mut degrade_flag) = (1, rng.gen_range(0.9..=1.0), 0);
                if u < p.quality_fail {
                    quality_flag = 0;
                } else if u < p.quality_fail + p.sensitivity_fail {
                    sensitivity = rng.gen_range(0.5..0.9);
                } else if u < p.quality_fail + p.sensitivity_fail + p.degrade_fail {
                    degrade_flag = 1;
                }
                out.push(Footprint {
                    point,
                    rh85: Some(rh85),
                    rh95: Some(rh95),
                    quality_flag,
                    degrade_flag,
                    sensitivity,
                    acquired: first_day + Days::new(rng.gen_range(0..900)),
                });
            }
        }
    }
    Ok(out)
}

/// Surface reflectances of a cell: urban cells brighten in SWIR and darken
/// in NIR with height; tree-covered cells keep a strong NIR response.
fn reflectance(t: Option<f64>, green: bool) -> [f64; 5] {
    match (t, green) {
        (Some(t), false) => [0.08 + 0.05 * t, 0.10 + 0.06 * t, 0.12 + 0.08 * t, 0.25 - 0.07 * t, 0.22 + 0.12 * t],
        (Some(t), true) => [0.04 + 0.03 * t, 0.08 + 0.03 * t, 0.05 + 0.01 * t, 0.45 - 0.03 * t, 0.15 + 0.12 * t],
        (None, _) => [0.05, 0.09, 0.08, 0.35, 0.18],
    }
}

fn scenes(seed: u64, p: &SynthParams, spec: &GridSpec, heights: &Raster, green: &Raster) -> Result<Vec<Scene>, PipelineError> {
    let nd = DEFAULT_NODATA;
    let span = p.height_max - p.height_min;
    let t_of = |i: usize| heights.valid_at(i).map(|h| (h - p.height_min) / span);
    let noise = Normal::new(0.0, p.band_noise).expect("validated noise");
    let first_day = NaiveDate::from_ymd_opt(2020, 1, 10).expect("valid date");
    let mut out = Vec::new();
    for (k, sensor) in [Sensor::OpticalL, Sensor::OpticalS, Sensor::Radar].into_iter().enumerate() {
        let mut rng = stream(seed, 10 + k as u64);
        for s in 0..p.n_scenes {
            let acquired = first_day + Days::new((s * 365 / p.n_scenes.max(1)) as u64 + k as u64);
            let gain = 1.0 + rng.gen_range(-0.05..0.05);
            let mut bands = BTreeMap::new();
            if sensor == Sensor::Radar {
                let mut vv = Vec::with_capacity(spec.len());
                let mut vh = Vec::with_capacity(spec.len());
                for i in 0..spec.len() {
                    let t = t_of(i);
                    let base = t.map_or((-11.0, -17.0), |t| (-14.0 + 8.0 * t, -21.0 + 6.0 * t));
                    vv.push(base.0 + 100.0 * noise.sample(&mut rng));
                    vh.push(base.1 + 100.0 * noise.sample(&mut rng));
                }
                bands.insert(BandRole::Vv, Raster::new(*spec, vv, nd).expect("sized to grid"));
                bands.insert(BandRole::Vh, Raster::new(*spec, vh, nd).expect("sized to grid"));
                out.push(Scene::new(sensor, bands, None, None, acquired).map_err(|e| PipelineError::Config(e.to_string()))?);
                continue;
            }
            let roles = [BandRole::Blue, BandRole::Green, BandRole::Red, BandRole::Nir, BandRole::Swir1];
            let mut planes: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(spec.len())).collect();
            for i in 0..spec.len() {
                let refl = reflectance(t_of(i), green.valid_at(i) == Some(1.0));
                for (plane, v) in planes.iter_mut().zip(refl) {
                    plane.push((gain * v + noise.sample(&mut rng)).max(0.001));
                }
            }
            for (role, plane) in roles.into_iter().zip(planes) {
                bands.insert(role, Raster::new(*spec, plane, nd).expect("sized to grid"));
            }
            let mut mask = Raster::filled(*spec, 1.0, nd);
            for _ in 0..p.cloud_patches {
                let h = rng.gen_range((spec.n_rows / 20).max(1)..=(spec.n_rows / 6).max(1));
                let w = rng.gen_range((spec.n_cols / 20).max(1)..=(spec.n_cols / 6).max(1));
                let r0 = rng.gen_range(0..=spec.n_rows - h);
                let c0 = rng.gen_range(0..=spec.n_cols - w);
                for r in r0..r0 + h {
                    for c in c0..c0 + w {
                        mask.set(r, c, 0.0);
                    }
                }
            }
            let masked = mask.values().iter().filter(|&&v| v == 0.0).count() as f64 / spec.len() as f64;
            // the last scene of a long series is reported as overcast
            let cloud = if p.n_scenes >= 3 && s == p.n_scenes - 1 { 0.65 } else { masked };
            out.push(Scene::new(sensor, bands, Some(cloud), Some(mask), acquired).map_err(|e| PipelineError::Config(e.to_string()))?);
        }
    }
    Ok(out)
}

/// Files written by [`write_synthetic`], relative to its directory.
pub const SYNTH_CONFIG: &str = "config.toml";

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: super::Stage::Synth,
        message: format!("{}: {e}", path.display()),
    }
}

/// Writes every pipeline input plus `truth.asc`, `green.asc`,
/// `buildings.csv`, `synth.toml` and a ready-to-run `config.toml`.
pub fn write_synthetic(dir: &Path, scene: &SyntheticScene) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let grid = |r: &Raster, name: &str| write_ascii_grid(r, dir.join(name)).map_err(|e| io(&dir.join(name), e));
    write_footprints(dir.join("footprints.csv"), &scene.footprints).map_err(|e| io(dir, e))?;
    write_scene_manifest(dir.join("scenes.csv"), &scene.scenes).map_err(|e| io(dir, e))?;
    grid(&scene.dem, "dem.asc")?;
    grid(&scene.settlement, "settlement.asc")?;
    grid(&scene.urban_mask, "urban.asc")?;
    grid(&scene.truth.heights, "truth.asc")?;
    grid(&scene.green, "green.asc")?;
    write_partition(&scene.partition, dir.join("zones.asc"), dir.join("zones.csv")).map_err(|e| io(dir, e))?;

    let mut w = csv::Writer::from_path(dir.join("buildings.csv")).map_err(|e| io(dir, e))?;
    w.write_record(["min_x", "min_y", "max_x", "max_y", "height"]).map_err(|e| io(dir, e))?;
    for &(a, b, c, d, h) in &scene.blocks {
        w.serialize((a, b, c, d, h)).map_err(|e| io(dir, e))?;
    }
    w.flush().map_err(|e| io(dir, e))?;

    #[derive(Serialize)]
    struct TruthFile<'a> {
        seed: u64,
        params: &'a SynthParams,
    }
    let truth = toml::to_string(&TruthFile {
        seed: scene.truth.seed,
        params: &scene.truth.params,
    })
    .expect("params serialize");
    fs::write(dir.join("synth.toml"), truth).map_err(|e| io(dir, e))?;

    let config = PipelineConfig {
        seed: scene.truth.seed,
        paths: Paths {
            footprints: "footprints.csv".into(),
            scenes: "scenes.csv".into(),
            dem: "dem.asc".into(),
            settlement: "settlement.asc".into(),
            urban_mask: "urban.asc".into(),
            zones: "zones.asc".into(),
            zone_labels: "zones.csv".into(),
            out: "out".into(),
            reference: Some("truth.asc".into()),
            reference_polygons: Some("buildings.csv".into()),
        },
        sampling: SamplingConfig::default(),
        features: FeatureConfig::default(),
        forest: ForestConfig {
            n_trees: scene.truth.params.n_trees,
            ..ForestConfig::default()
        },
        subregions: SubregionConfig::default(),
        validation: ValidationConfig::default(),
    };
    let path = dir.join(SYNTH_CONFIG);
    fs::write(&path, config.to_toml()).map_err(|e| io(&path, e))?;
    Ok(path)
}

/// Reads synthetic parameters from a TOML file with the fields of
/// [`SynthParams`]; absent fields keep their defaults.
pub fn load_synth_params(path: &Path) -> Result<SynthParams, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let p: SynthParams = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    p.validate()?;
    Ok(p)
}
