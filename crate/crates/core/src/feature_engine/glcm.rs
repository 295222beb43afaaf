//! Sliding-window grey-level co-occurrence textures.
//!
//! Each output pixel gets a symmetric, normalized GLCM per direction
//! (distance 1) built from the valid pixel pairs inside its window. The
//! direction matrices are averaged, and mean, variance, contrast and
//! dissimilarity are read off the averaged matrix. Each direction only
//! needs a few integer sums over its pairs (count, Σ i + j, Σ i² + j²,
//! Σ (i − j)², Σ |i − j|), so the matrices are never materialized.

use rayon::prelude::*;

use super::FeatureError;
use crate::geo_grid::Raster;

pub const DEFAULT_LEVELS: usize = 32;

/// Pixel offset direction, distance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Deg0,
        Direction::Deg45,
        Direction::Deg90,
        Direction::Deg135,
    ];

    /// `(d_row, d_col)` to the partner pixel; rows grow southwards.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::Deg0 => (0, 1),
            Direction::Deg45 => (-1, 1),
            Direction::Deg90 => (-1, 0),
            Direction::Deg135 => (-1, -1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlcmParams {
    /// Window side in pixels. Even windows put the target pixel at
    /// `(⌈w/2⌉ − 1, ⌈w/2⌉ − 1)` inside the window.
    pub window: usize,
    pub levels: usize,
    pub directions: Vec<Direction>,
}

impl GlcmParams {
    pub fn new(window: usize, levels: usize) -> Self {
        Self {
            window,
            levels,
            directions: Direction::ALL.to_vec(),
        }
    }

    fn validate(&self) -> Result<(), FeatureError> {
        if self.levels < 2 {
            return Err(FeatureError::Config(format!("GLCM needs at least 2 grey levels, got {}", self.levels)));
        }
        if self.levels > u16::MAX as usize {
            return Err(FeatureError::Config(format!("too many grey levels: {}", self.levels)));
        }
        if self.window == 0 {
            return Err(FeatureError::Config("GLCM window must be at least 1 pixel".into()));
        }
        if self.directions.is_empty() {
            return Err(FeatureError::Config("GLCM needs at least one direction".into()));
        }
        Ok(())
    }

    /// Rows/columns before the target pixel inside the window.
    pub fn anchor(&self) -> usize {
        self.window.div_ceil(2) - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlcmFeatures {
    pub mean: Raster,
    pub variance: Raster,
    pub contrast: Raster,
    pub dissimilarity: Raster,
}

/// Grey level per pixel after global min–max binning; `None` for nodata.
pub fn quantize(band: &Raster, levels: usize) -> Vec<Option<u16>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in band.values().iter().filter(|v| band.is_valid_value(**v)) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    let top = (levels - 1) as f64;
    band.values()
        .iter()
        .map(|&v| {
            if !band.is_valid_value(v) {
                return None;
            }
            if hi <= lo {
                return Some(0);
            }
            let level = ((v - lo) / (hi - lo) * levels as f64).floor().clamp(0.0, top);
            Some(level as u16)
        })
        .collect()
}

/// Integer pair sums of one direction's symmetric co-occurrence counts.
#[derive(Clone, Copy, Default)]
struct PairSums {
    /// Unordered pairs; the symmetric matrix holds twice this many entries.
    n: u64,
    /// Σ (i + j), Σ (i² + j²), Σ (i − j)², Σ |i − j|
    s1: u64,
    s2: u64,
    sq_diff: u64,
    abs_diff: u64,
}

/// Texture statistics for one window, or `None` without any valid pair.
fn window_textures(
    q: &[Option<u16>],
    n_rows: usize,
    n_cols: usize,
    row: usize,
    col: usize,
    params: &GlcmParams,
    sums: &mut [PairSums],
) -> Option<[f64; 4]> {
    sums.iter_mut().for_each(|s| *s = PairSums::default());
    let a = params.anchor();
    let r0 = row.saturating_sub(a);
    let c0 = col.saturating_sub(a);
    let r_end = (row + params.window - a).min(n_rows);
    let c_end = (col + params.window - a).min(n_cols);
    // the window's true origin may be off-raster; clipped rows simply vanish

    for (dir, acc) in params.directions.iter().zip(sums.iter_mut()) {
        let (dr, dc) = dir.offset();
        for r in r0..r_end {
            let pr = r as isize + dr;
            if pr < r0 as isize || pr >= r_end as isize {
                continue;
            }
            for c in c0..c_end {
                let pc = c as isize + dc;
                if pc < c0 as isize || pc >= c_end as isize {
                    continue;
                }
                let (Some(i), Some(j)) = (q[r * n_cols + c], q[pr as usize * n_cols + pc as usize]) else {
                    continue;
                };
                let (i, j) = (u64::from(i), u64::from(j));
                let d = i.abs_diff(j);
                acc.n += 1;
                acc.s1 += i + j;
                acc.s2 += i * i + j * j;
                acc.sq_diff += d * d;
                acc.abs_diff += d;
            }
        }
    }

    let active = sums.iter().filter(|s| s.n > 0);
    let n_active = active.clone().count();
    if n_active == 0 {
        return None;
    }
    let k = n_active as f64;
    let (mut mean, mut contrast, mut dissimilarity) = (0.0, 0.0, 0.0);
    for s in active.clone() {
        let n = s.n as f64;
        mean += s.s1 as f64 / (2.0 * n);
        contrast += s.sq_diff as f64 / n;
        dissimilarity += s.abs_diff as f64 / n;
    }
    mean /= k;
    contrast /= k;
    dissimilarity /= k;
    // per direction: spread about its own mean (exact integer numerator)
    // plus the offset of that mean from the averaged one
    let mut variance = 0.0;
    for s in active {
        let two_n = 2 * u128::from(s.n);
        let spread = (two_n * u128::from(s.s2) - u128::from(s.s1) * u128::from(s.s1)) as f64 / (two_n * two_n) as f64;
        let offset = s.s1 as f64 / two_n as f64 - mean;
        variance += spread + offset * offset;
    }
    variance /= k;
    Some([mean, variance, contrast, dissimilarity])
}

/// GLCM mean, variance, contrast and dissimilarity for every pixel of
/// `band`. Pixels that are nodata themselves, or whose window has no valid
/// pair in any direction, are nodata in all four outputs.
pub fn glcm_features(band: &Raster, params: &GlcmParams) -> Result<GlcmFeatures, FeatureError> {
    params.validate()?;
    let spec = *band.spec();
    let nodata = band.nodata();
    let q = quantize(band, params.levels);
    let n_dir = params.directions.len();
    let rows: Vec<Vec<[f64; 4]>> = (0..spec.n_rows)
        .into_par_iter()
        .map(|row| {
            let mut sums = vec![PairSums::default(); n_dir];
            (0..spec.n_cols)
                .map(|col| {
                    if q[row * spec.n_cols + col].is_none() {
                        return [nodata; 4];
                    }
                    window_textures(&q, spec.n_rows, spec.n_cols, row, col, params, &mut sums)
                        .unwrap_or([nodata; 4])
                })
                .collect()
        })
        .collect();
    let plane = |k: usize| {
        let values = rows.iter().flat_map(|r| r.iter().map(move |px| px[k])).collect();
        Raster::new(spec, values, nodata).expect("same grid")
    };
    Ok(GlcmFeatures {
        mean: plane(0),
        variance: plane(1),
        contrast: plane(2),
        dissimilarity: plane(3),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geo_grid::{GridSpec, DEFAULT_NODATA};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Builds every direction's full co-occurrence matrix, averages them
    /// and evaluates the textures by double summation.
    pub(crate) fn brute_force(
        band: &Raster,
        window: usize,
        levels: usize,
        directions: &[Direction],
        row: usize,
        col: usize,
    ) -> Option<[f64; 4]> {
        let spec = band.spec();
        let (lo, hi) = band
            .values()
            .iter()
            .filter(|v| band.is_valid_value(**v))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        let level = |r: usize, c: usize| -> Option<usize> {
            let v = band.valid(r, c)?;
            if hi <= lo {
                return Some(0);
            }
            Some((((v - lo) / (hi - lo) * levels as f64).floor() as usize).min(levels - 1))
        };
        level(row, col)?;
        let a = window.div_ceil(2) - 1;
        let in_window = |r: isize, c: isize| {
            let (top, left) = (row as isize - a as isize, col as isize - a as isize);
            r >= 0
                && c >= 0
                && (r as usize) < spec.n_rows
                && (c as usize) < spec.n_cols
                && r >= top
                && r < top + window as isize
                && c >= left
                && c < left + window as isize
        };
        let mut avg = vec![vec![0.0; levels]; levels];
        let mut used = 0;
        for dir in directions {
            let (dr, dc) = dir.offset();
            let mut counts = vec![vec![0.0f64; levels]; levels];
            let mut total = 0.0;
            for r in 0..spec.n_rows as isize {
                for c in 0..spec.n_cols as isize {
                    let (pr, pc) = (r + dr, c + dc);
                    if !in_window(r, c) || !in_window(pr, pc) {
                        continue;
                    }
                    let (Some(i), Some(j)) = (level(r as usize, c as usize), level(pr as usize, pc as usize))
                    else {
                        continue;
                    };
                    counts[i][j] += 1.0;
                    counts[j][i] += 1.0;
                    total += 2.0;
                }
            }
            if total == 0.0 {
                continue;
            }
            used += 1;
            for i in 0..levels {
                for j in 0..levels {
                    avg[i][j] += counts[i][j] / total;
                }
            }
        }
        if used == 0 {
            return None;
        }
        for row in avg.iter_mut() {
            for p in row.iter_mut() {
                *p /= used as f64;
            }
        }
        let (mut mean, mut contrast, mut dissim) = (0.0, 0.0, 0.0);
        for (i, row) in avg.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                mean += i as f64 * p;
                let d = i as f64 - j as f64;
                contrast += d * d * p;
                dissim += d.abs() * p;
            }
        }
        let mut var = 0.0;
        for (i, row) in avg.iter().enumerate() {
            for &p in row {
                var += (i as f64 - mean).powi(2) * p;
            }
        }
        Some([mean, var, contrast, dissim])
    }

    pub(crate) fn random_band(rng: &mut ChaCha8Rng, rows: usize, cols: usize, nodata_frac: f64) -> Raster {
        let spec = GridSpec::new(0.0, 0.0, 10.0, rows, cols).unwrap();
        Raster::from_fn(spec, DEFAULT_NODATA, |_, _| {
            if rng.gen_bool(nodata_frac) {
                DEFAULT_NODATA
            } else {
                rng.gen_range(0.0..100.0)
            }
        })
    }

    pub(crate) fn assert_matches_oracle(band: &Raster, params: &GlcmParams) {
        let f = glcm_features(band, params).unwrap();
        let spec = band.spec();
        for r in 0..spec.n_rows {
            for c in 0..spec.n_cols {
                let got = [&f.mean, &f.variance, &f.contrast, &f.dissimilarity].map(|x| x.valid(r, c));
                match brute_force(band, params.window, params.levels, &params.directions, r, c) {
                    None => assert!(got.iter().all(Option::is_none), "({r},{c}) expected nodata"),
                    Some(want) => {
                        for k in 0..4 {
                            let g = got[k].expect("value");
                            assert!((g - want[k]).abs() <= 1e-12, "({r},{c}) feature {k}: {g} vs {}", want[k]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_window_has_no_texture() {
        let spec = GridSpec::new(0.0, 0.0, 10.0, 5, 5).unwrap();
        let band = Raster::filled(spec, 3.0, DEFAULT_NODATA);
        let f = glcm_features(&band, &GlcmParams::new(5, 32)).unwrap();
        assert!(f.contrast.values().iter().all(|v| *v == 0.0));
        assert!(f.dissimilarity.values().iter().all(|v| *v == 0.0));
        assert!(f.variance.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn checkerboard_horizontal() {
        let spec = GridSpec::new(0.0, 0.0, 10.0, 4, 4).unwrap();
        let band = Raster::from_fn(spec, DEFAULT_NODATA, |r, c| ((r + c) % 2) as f64);
        let params = GlcmParams {
            window: 4,
            levels: 2,
            directions: vec![Direction::Deg0],
        };
        let f = glcm_features(&band, &params).unwrap();
        // anchor 1: pixel (1,1) sees the whole 4×4 board
        assert_eq!(f.contrast.get(1, 1), 1.0);
        assert_eq!(f.dissimilarity.get(1, 1), 1.0);
        assert_eq!(f.mean.get(1, 1), 0.5);
        assert_eq!(brute_force(&band, 4, 2, &[Direction::Deg0], 1, 1).unwrap()[2], 1.0);
    }

    #[test]
    fn anchors() {
        assert_eq!(GlcmParams::new(2, 32).anchor(), 0);
        assert_eq!(GlcmParams::new(5, 32).anchor(), 2);
        assert_eq!(GlcmParams::new(6, 32).anchor(), 2);
    }

    #[test]
    fn rejects_single_level() {
        let spec = GridSpec::new(0.0, 0.0, 10.0, 2, 2).unwrap();
        let band = Raster::filled(spec, 1.0, DEFAULT_NODATA);
        assert!(matches!(glcm_features(&band, &GlcmParams::new(2, 1)), Err(FeatureError::Config(_))));
    }

    #[test]
    fn random_window_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        let band = random_band(&mut rng, 8, 8, 0.0);
        assert_matches_oracle(&band, &GlcmParams::new(8, 8));
        assert_matches_oracle(&band, &GlcmParams::new(3, 8));
    }

    #[test]
    fn nodata_pixels_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let band = random_band(&mut rng, 10, 7, 0.3);
        for w in [2, 5, 6] {
            assert_matches_oracle(&band, &GlcmParams::new(w, 32));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn texture_inequalities(seed in any::<u64>(), w in 1usize..7, levels in 2usize..33) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let band = random_band(&mut rng, 9, 9, 0.1);
            let f = glcm_features(&band, &GlcmParams::new(w, levels)).unwrap();
            for i in 0..81 {
                if let (Some(c), Some(d)) = (f.contrast.valid_at(i), f.dissimilarity.valid_at(i)) {
                    prop_assert!(d >= 0.0 && c >= d);
                    prop_assert!(f.variance.valid_at(i).unwrap() >= 0.0);
                }
            }
        }
    }
}
