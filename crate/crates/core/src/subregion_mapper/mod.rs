//! Subregion partition, per-zone forests and the wall-to-wall height map.

mod partition;

pub use partition::{read_partition, write_partition, PartitionIoError};

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::feature_engine::FeatureStack;
use crate::gedi_sampler::HeightSample;
use crate::geo_grid::{mollweide_inverse, GridError, GridSpec, Raster};
use crate::rf_regressor::{predict_unchecked, train, ForestError, ForestModel, ForestParams, TrainSet};

pub const NORTHERN_LAT_LIMIT: f64 = 51.6;
pub const NORTHERN_RADIUS_M: f64 = 600_000.0;
/// Zones with fewer usable samples than this get no model.
pub const MIN_ZONE_SAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubregionError {
    #[error("{0} grid does not match the partition grid")]
    GridMismatch(&'static str),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("no model for zone(s) {}", join_ids(.0))]
    MissingModels(Vec<u32>),
    #[error("zone {zone}: {source}")]
    Forest {
        zone: u32,
        #[source]
        source: ForestError,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneLabel {
    pub admin: String,
    pub climate: String,
}

/// Integer zone ids on a grid, with names and the set of zones beyond the
/// lidar coverage limit.
#[derive(Debug, Clone, PartialEq)]
pub struct SubregionPartition {
    zones: Raster,
    labels: BTreeMap<u32, ZoneLabel>,
    northern_ids: BTreeSet<u32>,
}

impl SubregionPartition {
    /// Every valid zone cell must hold a non-negative integer id that has
    /// a label; northern ids must be labelled too.
    pub fn new(
        zones: Raster,
        labels: BTreeMap<u32, ZoneLabel>,
        northern_ids: BTreeSet<u32>,
    ) -> Result<Self, SubregionError> {
        for (i, &v) in zones.values().iter().enumerate() {
            if !zones.is_valid_value(v) {
                continue;
            }
            if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
                return Err(SubregionError::InvalidPartition(format!("cell {i} holds non-integer zone id {v}")));
            }
            if !labels.contains_key(&(v as u32)) {
                return Err(SubregionError::InvalidPartition(format!("zone {v} has no label")));
            }
        }
        if let Some(id) = northern_ids.iter().find(|id| !labels.contains_key(id)) {
            return Err(SubregionError::InvalidPartition(format!("northern zone {id} has no label")));
        }
        Ok(Self {
            zones,
            labels,
            northern_ids,
        })
    }

    pub fn zones(&self) -> &Raster {
        &self.zones
    }

    pub fn spec(&self) -> &GridSpec {
        self.zones.spec()
    }

    pub fn labels(&self) -> &BTreeMap<u32, ZoneLabel> {
        &self.labels
    }

    pub fn northern_ids(&self) -> &BTreeSet<u32> {
        &self.northern_ids
    }

    pub fn zone_at(&self, index: usize) -> Option<u32> {
        self.zones.valid_at(index).map(|v| v as u32)
    }

    /// Adds zones most of whose cell centres lie north of `lat_limit`.
    pub fn with_northern_by_latitude(mut self, lat_limit: f64) -> Result<Self, SubregionError> {
        let spec = *self.spec();
        let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for i in 0..spec.len() {
            let Some(z) = self.zone_at(i) else { continue };
            let (r, c) = spec.row_col(i);
            let (x, y) = spec.cell_center(r, c);
            let lat = mollweide_inverse(x, y, spec.sphere_radius)?.lat();
            let t = tally.entry(z).or_default();
            t.1 += 1;
            if lat > lat_limit {
                t.0 += 1;
            }
        }
        self.northern_ids
            .extend(tally.into_iter().filter(|(_, (n, all))| 2 * n > *all).map(|(z, _)| z));
        Ok(self)
    }
}

/// Mapping extent: 1 inside, nodata outside.
#[derive(Debug, Clone, PartialEq)]
pub struct UrbanMask {
    raster: Raster,
}

impl UrbanMask {
    pub fn new(raster: Raster) -> Result<Self, SubregionError> {
        if let Some(v) = raster.values().iter().find(|&&v| raster.is_valid_value(v) && v != 1.0) {
            return Err(SubregionError::InvalidMask(format!("value {v} is neither 1 nor nodata")));
        }
        Ok(Self { raster })
    }

    /// Mask covering every cell of `spec`.
    pub fn full(spec: GridSpec, nodata: f64) -> Self {
        Self {
            raster: Raster::filled(spec, 1.0, nodata),
        }
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn spec(&self) -> &GridSpec {
        self.raster.spec()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.raster.valid_at(index).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZoneAssignment {
    pub sets: BTreeMap<u32, Vec<HeightSample>>,
    /// Samples on nodata zone cells.
    pub dropped: usize,
}

impl ZoneAssignment {
    pub fn kept(&self) -> usize {
        self.sets.values().map(Vec::len).sum()
    }
}

fn check_on_grid(samples: &[HeightSample], spec: &GridSpec) -> Result<(), SubregionError> {
    if samples.iter().any(|s| s.row >= spec.n_rows || s.col >= spec.n_cols) {
        return Err(SubregionError::GridMismatch("sample"));
    }
    Ok(())
}

/// Groups samples by the zone of their cell.
pub fn assign_subregion(samples: &[HeightSample], part: &SubregionPartition) -> Result<ZoneAssignment, SubregionError> {
    let spec = part.spec();
    check_on_grid(samples, spec)?;
    let mut out = ZoneAssignment::default();
    for s in samples {
        match part.zone_at(spec.index(s.row, s.col)) {
            Some(z) => out.sets.entry(z).or_default().push(*s),
            None => out.dropped += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NorthernSets {
    pub sets: BTreeMap<u32, Vec<HeightSample>>,
    /// Northern zones with fewer than the minimum samples in range, and
    /// how many they had.
    pub untrainable: BTreeMap<u32, usize>,
}

/// For each northern zone, every sample whose cell centre lies within
/// `radius` metres (inclusive, Euclidean in projected coordinates) of the
/// nearest cell centre of that zone.
pub fn northern_training_sets(
    samples: &[HeightSample],
    part: &SubregionPartition,
    radius: f64,
    min_samples: usize,
) -> Result<NorthernSets, SubregionError> {
    let spec = *part.spec();
    check_on_grid(samples, &spec)?;
    let r2 = radius * radius;
    let mut out = NorthernSets::default();
    for &zone in part.northern_ids() {
        // the nearest zone cell to an outside point is always on the
        // zone's edge, so only edge cells need checking
        let edge = edge_cells(part, zone);
        let set: Vec<HeightSample> = samples
            .iter()
            .filter(|s| {
                if part.zone_at(spec.index(s.row, s.col)) == Some(zone) {
                    return true;
                }
                let (sx, sy) = spec.cell_center(s.row, s.col);
                edge.iter().any(|&(x, y)| {
                    let (dx, dy) = (sx - x, sy - y);
                    dx * dx + dy * dy <= r2
                })
            })
            .copied()
            .collect();
        if set.len() < min_samples {
            out.untrainable.insert(zone, set.len());
        } else {
            out.sets.insert(zone, set);
        }
    }
    Ok(out)
}

fn edge_cells(part: &SubregionPartition, zone: u32) -> Vec<(f64, f64)> {
    let spec = part.spec();
    let is_zone = |r: isize, c: isize| {
        r >= 0
            && c >= 0
            && (r as usize) < spec.n_rows
            && (c as usize) < spec.n_cols
            && part.zone_at(spec.index(r as usize, c as usize)) == Some(zone)
    };
    let mut out = Vec::new();
    for r in 0..spec.n_rows {
        for c in 0..spec.n_cols {
            let (ri, ci) = (r as isize, c as isize);
            if is_zone(ri, ci) && !(is_zone(ri - 1, ci) && is_zone(ri + 1, ci) && is_zone(ri, ci - 1) && is_zone(ri, ci + 1)) {
                out.push(spec.cell_center(r, c));
            }
        }
    }
    out
}

/// Seed for a zone's forest, so zones do not share tree streams.
pub fn zone_seed(seed: u64, zone: u32) -> u64 {
    seed ^ u64::from(zone).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZoneModels {
    pub models: BTreeMap<u32, ForestModel>,
    /// Zones skipped for having too few usable rows, with their row count.
    pub untrainable: BTreeMap<u32, usize>,
    /// Sample rows dropped for a nodata feature, summed over zones.
    pub nodata_rows: usize,
}

/// Trains one forest per zone set. Sets whose usable rows fall below
/// `min_samples` are reported, not trained.
pub fn train_zone_models(
    sets: &BTreeMap<u32, Vec<HeightSample>>,
    stack: &FeatureStack,
    params: &ForestParams,
    min_samples: usize,
) -> Result<ZoneModels, SubregionError> {
    let jobs: Vec<(u32, &Vec<HeightSample>)> = sets.iter().map(|(z, s)| (*z, s)).collect();
    // (zone, rows with nodata features, model, usable rows)
    type Trained = (u32, usize, Option<ForestModel>, usize);
    let results: Vec<Result<Trained, SubregionError>> = jobs
        .par_iter()
        .map(|&(zone, samples)| {
            let forest = |source| SubregionError::Forest { zone, source };
            let (ts, dropped) = TrainSet::from_samples(samples, stack).map_err(forest)?;
            if ts.n_rows() < min_samples.max(1) {
                return Ok((zone, ts.n_rows(), None, dropped));
            }
            let p = ForestParams {
                seed: zone_seed(params.seed, zone),
                ..*params
            };
            let model = train(&ts, &p).map_err(forest)?.with_subregion(zone);
            Ok((zone, ts.n_rows(), Some(model), dropped))
        })
        .collect();
    let mut out = ZoneModels::default();
    for r in results {
        let (zone, n, model, dropped) = r?;
        out.nodata_rows += dropped;
        match model {
            Some(m) => {
                out.models.insert(zone, m);
            }
            None => {
                out.untrainable.insert(zone, n);
            }
        }
    }
    Ok(out)
}

/// Predicts every masked cell with its zone's model. Cells outside the
/// mask, on nodata zones, or with any nodata feature are nodata (the
/// mask's sentinel).
pub fn map_heights(
    models: &BTreeMap<u32, ForestModel>,
    stack: &FeatureStack,
    mask: &UrbanMask,
    part: &SubregionPartition,
) -> Result<Raster, SubregionError> {
    let spec = *part.spec();
    if !stack.spec().is_compatible(&spec) {
        return Err(SubregionError::GridMismatch("feature"));
    }
    if !mask.spec().is_compatible(&spec) {
        return Err(SubregionError::GridMismatch("mask"));
    }
    let mut missing = BTreeSet::new();
    for i in 0..spec.len() {
        if let Some(z) = part.zone_at(i).filter(|_| mask.contains(i)) {
            if !models.contains_key(&z) {
                missing.insert(z);
            }
        }
    }
    if !missing.is_empty() {
        return Err(SubregionError::MissingModels(missing.into_iter().collect()));
    }
    for m in models.values() {
        if m.feature_names() != stack.names() {
            return Err(SubregionError::Forest {
                zone: m.subregion_id(),
                source: ForestError::RowLength {
                    expected: m.n_features(),
                    found: stack.len(),
                },
            });
        }
    }

    let nodata = mask.raster().nodata();
    let mut values = vec![nodata; spec.len()];
    values
        .par_chunks_mut(spec.n_cols)
        .enumerate()
        .for_each(|(r, out)| {
            let mut row = Vec::with_capacity(stack.len());
            for (c, v) in out.iter_mut().enumerate() {
                let i = spec.index(r, c);
                if !mask.contains(i) {
                    continue;
                }
                let Some(z) = part.zone_at(i) else { continue };
                if stack.row_into(i, &mut row) {
                    *v = predict_unchecked(&models[&z], &row);
                }
            }
        });
    Ok(Raster::new(spec, values, nodata)?)
}
