//! Accuracy metrics, reference rasters and cross-product comparison.

mod polygons;

pub use polygons::{area_weighted_reference, read_polygons, ring_area, AreaWeighted, BuildingPolygon, PolygonCsvError, Ring};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geo_grid::{fmt_f64, GridError, GridSpec, Raster};
use crate::subregion_mapper::UrbanMask;

/// Label of the report covering every stratum.
pub const OVERALL: &str = "all";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidatorError {
    #[error("inputs differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no values to compare")]
    Empty,
    #[error("grids are not aligned: {0}")]
    Misaligned(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<(), ValidatorError> {
    if a.len() != b.len() {
        return Err(ValidatorError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Product-moment correlation. `None` when fewer than two pairs or either
/// side has zero variance.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<Option<f64>, ValidatorError> {
    check_lengths(a, b)?;
    let n = a.len();
    if n < 2 {
        return Ok(None);
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(None);
    }
    Ok(Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)))
}

pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64, ValidatorError> {
    check_lengths(pred, reference)?;
    if pred.is_empty() {
        return Err(ValidatorError::Empty);
    }
    let sse: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Ratio `b / a` when it is a positive integer up to rounding noise.
fn integer_ratio(b: f64, a: f64) -> Option<usize> {
    let k = b / a;
    let r = k.round();
    (r >= 1.0 && (k - r).abs() <= 1e-9 * r).then_some(r as usize)
}

/// Offset of `b` from `a` in units of `cell`, when whole.
fn integer_offset(b: f64, a: f64, cell: f64) -> Option<i64> {
    let k = (b - a) / cell;
    let r = k.round();
    ((k - r).abs() <= 1e-9 * r.abs().max(1.0)).then_some(r as i64)
}

/// Block mean of the valid fine pixels under each coarse cell. Blocks with
/// no valid pixel, including blocks beyond the fine grid, are nodata.
pub fn downscale_raster(fine: &Raster, coarse: &GridSpec) -> Result<Raster, ValidatorError> {
    let fs = fine.spec();
    let k = integer_ratio(coarse.cell_size, fs.cell_size).ok_or_else(|| {
        ValidatorError::Misaligned(format!(
            "coarse cell {} is not a multiple of fine cell {}",
            coarse.cell_size, fs.cell_size
        ))
    })?;
    let dc = integer_offset(coarse.origin_x, fs.origin_x, fs.cell_size);
    let dr = integer_offset(fs.origin_y, coarse.origin_y, fs.cell_size);
    let (Some(dc), Some(dr)) = (dc, dr) else {
        return Err(ValidatorError::Misaligned("origins are not on the fine grid".into()));
    };
    let nodata = fine.nodata();
    Ok(Raster::from_fn(*coarse, nodata, |r, c| {
        // summed relative to the first valid pixel, so uniform blocks are exact
        let (mut pivot, mut sum, mut n) = (None, 0.0, 0usize);
        for fr in 0..k as i64 {
            let rr = dr + (r * k) as i64 + fr;
            if rr < 0 || rr >= fs.n_rows as i64 {
                continue;
            }
            for fc in 0..k as i64 {
                let cc = dc + (c * k) as i64 + fc;
                if cc < 0 || cc >= fs.n_cols as i64 {
                    continue;
                }
                if let Some(v) = fine.valid(rr as usize, cc as usize) {
                    sum += v - *pivot.get_or_insert(v);
                    n += 1;
                }
            }
        }
        match pivot {
            Some(p) => p + sum / n as f64,
            None => nodata,
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub stratum: String,
    pub n: usize,
    /// `None` when undefined (n < 2 or zero variance).
    pub pearson_r: Option<f64>,
    /// `None` when n = 0.
    pub rmse: Option<f64>,
}

impl ValidationReport {
    pub fn from_pairs(stratum: impl Into<String>, a: &[f64], b: &[f64]) -> Result<Self, ValidatorError> {
        Ok(Self {
            stratum: stratum.into(),
            n: a.len(),
            pearson_r: pearson_r(a, b)?,
            rmse: if a.is_empty() { None } else { Some(rmse(a, b)?) },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// One report per stratum in ascending id order, then the overall one.
    pub reports: Vec<ValidationReport>,
    /// `a - b` on masked cells where both are valid.
    pub difference: Raster,
}

/// Compares two products on masked cells where both are valid, per
/// stratum (integer ids) and overall. Every stratum present under the
/// mask gets a report, even with no co-valid cells. Cells whose stratum
/// is nodata still count towards the overall report.
pub fn compare_products(
    a: &Raster,
    b: &Raster,
    mask: Option<&UrbanMask>,
    strata: Option<&Raster>,
) -> Result<Comparison, ValidatorError> {
    let spec = a.spec();
    spec.ensure_compatible(b.spec())?;
    if let Some(m) = mask {
        spec.ensure_compatible(m.spec())?;
    }
    if let Some(s) = strata {
        spec.ensure_compatible(s.spec())?;
    }
    let mut per: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut all_a, mut all_b) = (Vec::new(), Vec::new());
    let mut diff = vec![a.nodata(); spec.len()];
    for (i, d) in diff.iter_mut().enumerate() {
        if mask.is_some_and(|m| !m.contains(i)) {
            continue;
        }
        let slot = strata.and_then(|s| s.valid_at(i)).map(|z| per.entry(z as i64).or_default());
        let (Some(va), Some(vb)) = (a.valid_at(i), b.valid_at(i)) else { continue };
        if let Some((sa, sb)) = slot {
            sa.push(va);
            sb.push(vb);
        }
        all_a.push(va);
        all_b.push(vb);
        *d = va - vb;
    }
    let mut reports = per
        .iter()
        .map(|(z, (sa, sb))| ValidationReport::from_pairs(z.to_string(), sa, sb))
        .collect::<Result<Vec<_>, _>>()?;
    reports.push(ValidationReport::from_pairs(OVERALL, &all_a, &all_b)?);
    Ok(Comparison {
        reports,
        difference: Raster::new(*spec, diff, a.nodata())?,
    })
}

/// Undefined values are written as `NA`.
pub fn format_reports(reports: &[ValidationReport]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), fmt_f64);
    let mut s = String::from("stratum,n,r,rmse\n");
    for r in reports {
        let _ = writeln!(s, "{},{},{},{}", r.stratum, r.n, opt(r.pearson_r), opt(r.rmse));
    }
    s
}

pub fn write_reports(reports: &[ValidationReport], path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, format_reports(reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_grid::DEFAULT_NODATA;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn closed_form_correlations() {
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap(), Some(1.0));
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(), Some(-1.0));
        assert_eq!(pearson_r(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), Some(0.8));
        assert_eq!(pearson_r(&[1.0, 2.0], &[5.0, 5.0]).unwrap(), None);
        assert_eq!(pearson_r(&[1.0], &[5.0]).unwrap(), None);
        assert!(pearson_r(&[1.0], &[5.0, 1.0]).is_err());
    }

    #[test]
    fn closed_form_rmse() {
        assert_eq!(rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5f64.sqrt());
        assert_eq!(rmse(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.5, 2.5, 9.5], &[-1.0, 0.0, 7.0]).unwrap(), 2.5);
        assert_eq!(rmse(&[], &[]), Err(ValidatorError::Empty));
    }

    proptest! {
        #[test]
        fn correlation_symmetry_and_affine_invariance(
            pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..40),
            scale in 0.1..10.0f64,
            shift in -50.0..50.0f64,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = pearson_r(&a, &b).unwrap();
            prop_assume!(r.is_some());
            let r = r.unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((pearson_r(&b, &a).unwrap().unwrap() - r).abs() < 1e-12);
            let t: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
            prop_assert!((pearson_r(&t, &b).unwrap().unwrap() - r).abs() < 1e-9);
            let neg: Vec<f64> = a.iter().map(|v| -scale * v).collect();
            prop_assert!((pearson_r(&neg, &b).unwrap().unwrap() + r).abs() < 1e-9);
        }

        #[test]
        fn rmse_shift_invariance(
            pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..40),
            k in -1000.0..1000.0f64,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let e = rmse(&a, &b).unwrap();
            prop_assert!(e >= 0.0);
            let (ak, bk): (Vec<f64>, Vec<f64>) = a.iter().zip(&b).map(|(x, y)| (x + k, y + k)).unzip();
            prop_assert!((rmse(&ak, &bk).unwrap() - e).abs() <= 1e-9 * (1.0 + e + k.abs()));
            let off: Vec<f64> = a.iter().map(|v| v + 3.25).collect();
            prop_assert!((rmse(&off, &a).unwrap() - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn downscale_blocks() {
        let fine_spec = GridSpec::new(0.0, 20.0, 10.0, 2, 2).unwrap();
        let fine = Raster::new(fine_spec, vec![2.0, 4.0, 6.0, 8.0], DEFAULT_NODATA).unwrap();
        let coarse = GridSpec::new(0.0, 20.0, 20.0, 1, 1).unwrap();
        assert_eq!(downscale_raster(&fine, &coarse).unwrap().get(0, 0), 5.0);
        let sparse = Raster::new(fine_spec, vec![DEFAULT_NODATA, DEFAULT_NODATA, 7.5, DEFAULT_NODATA], DEFAULT_NODATA).unwrap();
        assert_eq!(downscale_raster(&sparse, &coarse).unwrap().get(0, 0), 7.5);
        let none = Raster::nodata_like(fine_spec, DEFAULT_NODATA);
        assert_eq!(downscale_raster(&none, &coarse).unwrap().valid(0, 0), None);
        let uniform = Raster::filled(GridSpec::new(0.0, 60.0, 10.0, 6, 6).unwrap(), 3.3, DEFAULT_NODATA);
        let c = downscale_raster(&uniform, &GridSpec::new(0.0, 60.0, 30.0, 2, 2).unwrap()).unwrap();
        assert!(c.values().iter().all(|&v| v == 3.3));

        assert!(matches!(
            downscale_raster(&fine, &GridSpec::new(0.0, 20.0, 15.0, 1, 1).unwrap()),
            Err(ValidatorError::Misaligned(_))
        ));
        assert!(matches!(
            downscale_raster(&fine, &GridSpec::new(5.0, 20.0, 20.0, 1, 1).unwrap()),
            Err(ValidatorError::Misaligned(_))
        ));
    }

    #[test]
    fn downscale_composes_on_nested_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let fine = Raster::from_fn(GridSpec::new(100.0, 1300.0, 10.0, 120, 120).unwrap(), DEFAULT_NODATA, |_, _| rng.gen_range(0.0..60.0));
            let mid = GridSpec::new(100.0, 1300.0, 30.0, 40, 40).unwrap();
            let top = GridSpec::new(100.0, 1300.0, 120.0, 10, 10).unwrap();
            let two_step = downscale_raster(&downscale_raster(&fine, &mid).unwrap(), &top).unwrap();
            let direct = downscale_raster(&fine, &top).unwrap();
            for (a, b) in two_step.values().iter().zip(direct.values()) {
                assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }
    }

    #[test]
    fn compare_identical_and_disjoint() {
        let spec = GridSpec::new(0.0, 30.0, 10.0, 3, 3).unwrap();
        let a = Raster::from_fn(spec, DEFAULT_NODATA, |r, c| (r * 3 + c) as f64 + 3.0);
        let strata = Raster::from_fn(spec, DEFAULT_NODATA, |r, _| if r == 0 { 1.0 } else { 2.0 });
        let cmp = compare_products(&a, &a, None, Some(&strata)).unwrap();
        assert_eq!(cmp.reports.len(), 3);
        for rep in &cmp.reports {
            assert_eq!(rep.pearson_r, Some(1.0));
            assert_eq!(rep.rmse, Some(0.0));
        }
        assert_eq!(cmp.reports[2].n, 9);
        assert!(cmp.difference.values().iter().all(|&v| v == 0.0));

        let left = Raster::from_fn(spec, DEFAULT_NODATA, |_, c| if c == 0 { 1.0 } else { DEFAULT_NODATA });
        let right = Raster::from_fn(spec, DEFAULT_NODATA, |_, c| if c == 2 { 1.0 } else { DEFAULT_NODATA });
        let cmp = compare_products(&left, &right, None, Some(&strata)).unwrap();
        for rep in &cmp.reports {
            assert_eq!((rep.n, rep.pearson_r, rep.rmse), (0, None, None));
        }
        assert_eq!(cmp.difference.count_valid(), 0);
        assert_eq!(
            format_reports(&cmp.reports),
            "stratum,n,r,rmse\n1,0,NA,NA\n2,0,NA,NA\nall,0,NA,NA\n"
        );
    }

    #[test]
    fn compare_respects_mask() {
        let spec = GridSpec::new(0.0, 20.0, 10.0, 2, 2).unwrap();
        let a = Raster::new(spec, vec![1.0, 2.0, 3.0, 4.0], DEFAULT_NODATA).unwrap();
        let b = Raster::new(spec, vec![1.0, 2.0, 3.0, 14.0], DEFAULT_NODATA).unwrap();
        let mask = UrbanMask::new(Raster::new(spec, vec![1.0, 1.0, 1.0, DEFAULT_NODATA], DEFAULT_NODATA).unwrap()).unwrap();
        let cmp = compare_products(&a, &b, Some(&mask), None).unwrap();
        assert_eq!(cmp.reports.len(), 1);
        assert_eq!(cmp.reports[0].stratum, OVERALL);
        assert_eq!(cmp.reports[0].rmse, Some(0.0));
        assert_eq!(cmp.difference.valid(1, 1), None);
    }

    #[test]
    fn per_stratum_noise_is_recovered() {
        let spec = GridSpec::new(0.0, 4000.0, 10.0, 400, 400).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sigmas = [1.0, 2.5, 5.0, 9.0];
        let truth = Raster::from_fn(spec, DEFAULT_NODATA, |_, _| rng.gen_range(3.0..60.0));
        let strata = Raster::from_fn(spec, DEFAULT_NODATA, |r, _| (r / 100) as f64);
        let noisy = Raster::from_fn(spec, DEFAULT_NODATA, |r, c| {
            truth.get(r, c) + Normal::new(0.0, sigmas[r / 100]).unwrap().sample(&mut rng)
        });
        let cmp = compare_products(&noisy, &truth, None, Some(&strata)).unwrap();
        for (rep, s) in cmp.reports.iter().zip(sigmas) {
            let e = rep.rmse.unwrap();
            assert!((e - s).abs() <= 0.1 * s, "stratum {}: {e} vs {s}", rep.stratum);
        }
    }
}
