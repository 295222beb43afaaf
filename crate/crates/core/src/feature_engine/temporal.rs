//! Per-pixel multitemporal statistics over valid observations.

use rayon::prelude::*;

use super::FeatureError;
use crate::geo_grid::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stat {
    Mean,
    /// Population variance (divides by n).
    Variance,
    /// Linear-interpolated percentile at rank `p/100 · (n − 1)`.
    Percentile(u8),
}

impl Stat {
    pub fn name(self) -> String {
        match self {
            Stat::Mean => "mean".into(),
            Stat::Variance => "var".into(),
            Stat::Percentile(p) => format!("p{p}"),
        }
    }
}

pub const OPTICAL_STATS: [Stat; 5] = [
    Stat::Mean,
    Stat::Variance,
    Stat::Percentile(10),
    Stat::Percentile(25),
    Stat::Percentile(90),
];

pub const RADAR_STATS: [Stat; 7] = [
    Stat::Mean,
    Stat::Variance,
    Stat::Percentile(0),
    Stat::Percentile(10),
    Stat::Percentile(25),
    Stat::Percentile(90),
    Stat::Percentile(100),
];

fn percentile_sorted(sorted: &[f64], p: u8) -> f64 {
    let rank = f64::from(p) / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Statistics of one pixel's valid observations, in the order of `stats`.
/// Every entry is `None` when `series` is empty. Non-finite values are
/// ignored.
pub fn temporal_stats(series: &[f64], stats: &[Stat]) -> Vec<Option<f64>> {
    let mut sorted: Vec<f64> = series.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return vec![None; stats.len()];
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    // summing in sorted order makes the result independent of scene order
    let mean = sorted.iter().sum::<f64>() / n;
    stats
        .iter()
        .map(|stat| {
            Some(match *stat {
                Stat::Mean => mean,
                Stat::Variance => sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n,
                Stat::Percentile(p) => percentile_sorted(&sorted, p.min(100)),
            })
        })
        .collect()
}

/// Applies [`temporal_stats`] pixel-wise across a stack of co-registered
/// rasters. Returns one raster per requested statistic.
pub fn temporal_stats_rasters(layers: &[Raster], stats: &[Stat]) -> Result<Vec<Raster>, FeatureError> {
    let Some(first) = layers.first() else {
        return Err(FeatureError::Empty("no layers for temporal statistics".into()));
    };
    let spec = *first.spec();
    let nodata = first.nodata();
    if layers.iter().any(|l| *l.spec() != spec) {
        return Err(FeatureError::GridMismatch("temporal layers differ in grid".into()));
    }
    let per_pixel: Vec<Vec<Option<f64>>> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let series: Vec<f64> = layers.iter().filter_map(|l| l.valid_at(i)).collect();
            temporal_stats(&series, stats)
        })
        .collect();
    Ok((0..stats.len())
        .map(|k| {
            let values = per_pixel.iter().map(|px| px[k].unwrap_or(nodata)).collect();
            Raster::new(spec, values, nodata).expect("same grid")
        })
        .collect())
}
