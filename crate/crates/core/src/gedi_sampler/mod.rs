//! Footprint quality filtering, settlement masking, the RH composite height
//! rule, and aggregation of footprint heights into per-cell samples.

mod io;

pub use io::{read_footprints, read_samples, write_footprints, write_samples, SampleIoError};

use std::collections::BTreeMap;

use chrono::NaiveDate;
use thiserror::Error;

use crate::geo_grid::{mollweide_forward, GeoPoint, GridError, GridSpec, Raster};

/// Footprints with sensitivity below this are discarded.
pub const MIN_SENSITIVITY: f64 = 0.9;
/// Composite heights must exceed this (meters).
pub const MIN_HEIGHT: f64 = 2.5;
/// Minimum footprints per cell for a sample.
pub const MIN_COUNT: usize = 3;
/// NDVI p90 at or above this marks a cell as highly vegetated.
pub const DEFAULT_NDVI_THRESHOLD: f64 = 0.5;

/// Thresholds of the sampling rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingRules {
    pub min_sensitivity: f64,
    pub min_height: f64,
    pub min_count: usize,
    pub ndvi_threshold: f64,
}

impl Default for SamplingRules {
    fn default() -> Self {
        Self {
            min_sensitivity: MIN_SENSITIVITY,
            min_height: MIN_HEIGHT,
            min_count: MIN_COUNT,
            ndvi_threshold: DEFAULT_NDVI_THRESHOLD,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("malformed footprint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One lidar shot.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub point: GeoPoint,
    pub rh85: Option<f64>,
    pub rh95: Option<f64>,
    pub quality_flag: u8,
    pub degrade_flag: u32,
    pub sensitivity: f64,
    pub acquired: NaiveDate,
}

impl Footprint {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.quality_flag > 1 {
            return Err(SamplerError::Malformed(format!(
                "quality_flag must be 0 or 1, got {}",
                self.quality_flag
            )));
        }
        if !(0.0..=1.0).contains(&self.sensitivity) {
            return Err(SamplerError::Malformed(format!(
                "sensitivity {} outside [0, 1]",
                self.sensitivity
            )));
        }
        if let (Some(a), Some(b)) = (self.rh85, self.rh95) {
            if a > b {
                return Err(SamplerError::Malformed(format!("rh85 {a} exceeds rh95 {b}")));
            }
        }
        Ok(())
    }

    pub fn project(&self, radius: f64) -> Result<(f64, f64), GridError> {
        mollweide_forward(self.point, radius)
    }
}

/// One grid cell's mean composite height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightSample {
    pub row: usize,
    pub col: usize,
    pub mean_height: f64,
    pub count: usize,
}

/// Why a footprint failed the quality filter. The first failing rule wins,
/// checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FilterRule {
    Quality,
    Sensitivity,
    Degrade,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterTally {
    pub quality: usize,
    pub sensitivity: usize,
    pub degrade: usize,
}

impl FilterTally {
    pub fn total(&self) -> usize {
        self.quality + self.sensitivity + self.degrade
    }
}

pub fn violated_rule(fp: &Footprint) -> Option<FilterRule> {
    violated_rule_with(fp, MIN_SENSITIVITY)
}

pub fn violated_rule_with(fp: &Footprint, min_sensitivity: f64) -> Option<FilterRule> {
    if fp.quality_flag != 1 {
        Some(FilterRule::Quality)
    } else if !(fp.sensitivity >= min_sensitivity) {
        Some(FilterRule::Sensitivity)
    } else if fp.degrade_flag != 0 {
        Some(FilterRule::Degrade)
    } else {
        None
    }
}

/// Keeps footprints with quality flag 1, sensitivity ≥ 0.9 and degrade flag 0.
pub fn filter_footprints(fps: &[Footprint]) -> Vec<Footprint> {
    filter_footprints_tallied(fps).0
}

pub fn filter_footprints_tallied(fps: &[Footprint]) -> (Vec<Footprint>, FilterTally) {
    filter_footprints_tallied_with(fps, MIN_SENSITIVITY)
}

pub fn filter_footprints_tallied_with(fps: &[Footprint], min_sensitivity: f64) -> (Vec<Footprint>, FilterTally) {
    let mut tally = FilterTally::default();
    let mut kept = Vec::with_capacity(fps.len());
    for fp in fps {
        match violated_rule_with(fp, min_sensitivity) {
            None => kept.push(fp.clone()),
            Some(FilterRule::Quality) => tally.quality += 1,
            Some(FilterRule::Sensitivity) => tally.sensitivity += 1,
            Some(FilterRule::Degrade) => tally.degrade += 1,
        }
    }
    (kept, tally)
}

/// A footprint that survived settlement masking, with its grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedFootprint {
    pub footprint: Footprint,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskOutcome {
    pub kept: Vec<LocatedFootprint>,
    /// Landed on a non-settlement cell.
    pub dropped_not_settlement: usize,
    /// Projected outside the raster extent.
    pub dropped_outside: usize,
}

/// Keeps footprints whose projected position falls on a settlement cell
/// (value 1) of `settlement`.
pub fn mask_to_settlement(fps: &[Footprint], settlement: &Raster) -> Result<MaskOutcome, SamplerError> {
    let spec = settlement.spec();
    let mut out = MaskOutcome::default();
    for fp in fps {
        let (x, y) = fp.project(spec.sphere_radius)?;
        match spec.cell_of_point(x, y) {
            None => out.dropped_outside += 1,
            Some((row, col)) => {
                if settlement.valid(row, col) == Some(1.0) {
                    out.kept.push(LocatedFootprint {
                        footprint: fp.clone(),
                        row,
                        col,
                    });
                } else {
                    out.dropped_not_settlement += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Composite height: RH95, or RH85 where the cell is highly vegetated;
/// `Ok(None)` when the height does not exceed 2.5 m.
pub fn rh_composite(fp: &Footprint, high_vegetation: bool) -> Result<Option<f64>, SamplerError> {
    rh_composite_with(fp, high_vegetation, MIN_HEIGHT)
}

pub fn rh_composite_with(fp: &Footprint, high_vegetation: bool, min_height: f64) -> Result<Option<f64>, SamplerError> {
    let (metric, name) = if high_vegetation {
        (fp.rh85, "rh85")
    } else {
        (fp.rh95, "rh95")
    };
    let h = metric
        .filter(|h| h.is_finite())
        .ok_or_else(|| SamplerError::Malformed(format!("missing {name}")))?;
    Ok((h > min_height).then_some(h))
}

/// Counts cells whose NDVI p90 was nodata when deciding vegetation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VegetationDiagnostics {
    pub nodata_ndvi: usize,
}

/// `true` when the cell's NDVI p90 is at least `threshold`.
pub fn vegetation_flag(
    row: usize,
    col: usize,
    ndvi_p90: &Raster,
    threshold: f64,
    diag: &mut VegetationDiagnostics,
) -> bool {
    match ndvi_p90.valid(row, col) {
        Some(v) => v >= threshold,
        None => {
            diag.nodata_ndvi += 1;
            false
        }
    }
}

/// Aggregates composited heights per cell; cells with fewer than three
/// heights produce no sample. Output is sorted by `(row, col)`.
pub fn aggregate_samples(heights: &[((usize, usize), f64)], spec: &GridSpec) -> Vec<HeightSample> {
    aggregate_samples_tallied(heights, spec).0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AggregateTally {
    pub sparse_cells: usize,
    pub sparse_footprints: usize,
    pub out_of_grid: usize,
}

pub fn aggregate_samples_tallied(
    heights: &[((usize, usize), f64)],
    spec: &GridSpec,
) -> (Vec<HeightSample>, AggregateTally) {
    aggregate_samples_tallied_with(heights, spec, MIN_COUNT)
}

pub fn aggregate_samples_tallied_with(
    heights: &[((usize, usize), f64)],
    spec: &GridSpec,
    min_count: usize,
) -> (Vec<HeightSample>, AggregateTally) {
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut tally = AggregateTally::default();
    for &((row, col), h) in heights {
        if row >= spec.n_rows || col >= spec.n_cols {
            tally.out_of_grid += 1;
            continue;
        }
        cells.entry((row, col)).or_default().push(h);
    }
    let mut samples = Vec::new();
    for ((row, col), mut hs) in cells {
        if hs.len() < min_count {
            tally.sparse_cells += 1;
            tally.sparse_footprints += hs.len();
            continue;
        }
        // fixed summation order keeps the mean independent of input order;
        // summing offsets from the smallest keeps identical heights exact
        hs.sort_by(f64::total_cmp);
        let mean = hs[0] + hs.iter().map(|h| h - hs[0]).sum::<f64>() / hs.len() as f64;
        samples.push(HeightSample {
            row,
            col,
            mean_height: mean,
            count: hs.len(),
        });
    }
    (samples, tally)
}

/// Every drop rule applied between raw footprints and samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplingFunnel {
    pub input: usize,
    pub filter: FilterTally,
    pub outside_grid: usize,
    pub outside_settlement: usize,
    pub malformed: usize,
    pub low_height: usize,
    pub sparse_cells: usize,
    pub sparse_footprints: usize,
    pub vegetated_footprints: usize,
    pub ndvi_nodata: usize,
    pub samples: usize,
}

/// Runs filter → settlement mask → RH composite → aggregation.
///
/// `vegetation` is the NDVI p90 raster and threshold used for the RH85
/// fallback; with `None` every footprint uses RH95.
pub fn build_samples(
    fps: &[Footprint],
    settlement: &Raster,
    vegetation: Option<(&Raster, f64)>,
) -> Result<(Vec<HeightSample>, SamplingFunnel), SamplerError> {
    let rules = SamplingRules {
        ndvi_threshold: vegetation.map_or(DEFAULT_NDVI_THRESHOLD, |v| v.1),
        ..SamplingRules::default()
    };
    build_samples_with(fps, settlement, vegetation.map(|v| v.0), &rules)
}

/// [`build_samples`] with explicit thresholds; `ndvi_p90` enables the
/// RH85 fallback.
pub fn build_samples_with(
    fps: &[Footprint],
    settlement: &Raster,
    ndvi_p90: Option<&Raster>,
    rules: &SamplingRules,
) -> Result<(Vec<HeightSample>, SamplingFunnel), SamplerError> {
    let mut funnel = SamplingFunnel {
        input: fps.len(),
        ..Default::default()
    };
    let (kept, tally) = filter_footprints_tallied_with(fps, rules.min_sensitivity);
    funnel.filter = tally;
    let masked = mask_to_settlement(&kept, settlement)?;
    funnel.outside_grid = masked.dropped_outside;
    funnel.outside_settlement = masked.dropped_not_settlement;

    let mut diag = VegetationDiagnostics::default();
    let mut heights = Vec::with_capacity(masked.kept.len());
    for lf in &masked.kept {
        let vegetated = match ndvi_p90 {
            Some(ndvi) => vegetation_flag(lf.row, lf.col, ndvi, rules.ndvi_threshold, &mut diag),
            None => false,
        };
        match rh_composite_with(&lf.footprint, vegetated, rules.min_height) {
            Ok(Some(h)) => {
                if vegetated {
                    funnel.vegetated_footprints += 1;
                }
                heights.push(((lf.row, lf.col), h));
            }
            Ok(None) => funnel.low_height += 1,
            Err(_) => funnel.malformed += 1,
        }
    }
    funnel.ndvi_nodata = diag.nodata_ndvi;
    let (samples, agg) = aggregate_samples_tallied_with(&heights, settlement.spec(), rules.min_count);
    funnel.sparse_cells = agg.sparse_cells;
    funnel.sparse_footprints = agg.sparse_footprints;
    funnel.samples = samples.len();
    Ok((samples, funnel))
}
