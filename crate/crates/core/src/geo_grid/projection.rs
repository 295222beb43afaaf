//! Spherical Mollweide projection, central meridian 0°.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use super::{GeoPoint, GridError};

const MAX_ITER: usize = 50;
const RESIDUAL_TOL: f64 = 1e-13;

/// Latitudes beyond this use the polar form of the auxiliary equation.
const POLAR_LAT: f64 = std::f64::consts::FRAC_PI_4;

/// Solves `2θ + sin 2θ = π sin φ` for the auxiliary angle θ.
///
/// Newton iteration safeguarded by a bisection bracket on `[-π/2, π/2]`;
/// the left side is monotone in θ so the bracket always holds the root.
/// Near the poles the equation is solved for `π/2 − |θ|` instead, where
/// the direct residual is too flat to pin θ down.
pub fn solve_theta(lat: f64) -> Result<f64, GridError> {
    let (theta, _) = aux_angle(lat)?;
    Ok(theta)
}

/// θ and its polar gap `π/2 − |θ|`.
fn aux_angle(lat: f64) -> Result<(f64, f64), GridError> {
    if !(lat.abs() <= FRAC_PI_2) {
        return Err(GridError::InvalidPoint {
            lon: 0.0,
            lat: lat.to_degrees(),
        });
    }
    if lat.abs() > POLAR_LAT {
        let gap = polar_gap(FRAC_PI_2 - lat.abs());
        return Ok(((FRAC_PI_2 - gap).copysign(lat), gap));
    }
    let target = PI * lat.sin();
    let residual = |t: f64| 2.0 * t + (2.0 * t).sin() - target;

    let (mut lo, mut hi) = (-FRAC_PI_2, FRAC_PI_2);
    let mut theta = lat;
    let mut last_step = hi - lo;
    for _ in 0..MAX_ITER {
        let f = residual(theta);
        if f.abs() < RESIDUAL_TOL {
            return Ok((theta, FRAC_PI_2 - theta.abs()));
        }
        if f < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let df = 2.0 + 2.0 * (2.0 * theta).cos();
        let newton = theta - f / df;
        let step = (newton - theta).abs();
        let next = if df > 0.0 && newton > lo && newton < hi && step < 0.5 * last_step {
            last_step = step;
            newton
        } else {
            last_step = hi - lo;
            0.5 * (lo + hi)
        };
        if next == theta || hi - lo <= f64::EPSILON * FRAC_PI_2 {
            break;
        }
        theta = next;
    }
    if residual(theta).abs() < 1e-12 {
        Ok((theta, FRAC_PI_2 - theta.abs()))
    } else {
        Err(GridError::NoConvergence(lat))
    }
}

/// `2δ − sin 2δ` without cancellation for small δ.
fn gap_lhs(gap: f64) -> f64 {
    let u = 2.0 * gap;
    if u > 1.0 {
        return u - u.sin();
    }
    // u³/3! − u⁵/5! + …
    let u2 = u * u;
    let mut term = u * u2 / 6.0;
    let mut sum = 0.0f64;
    let mut k = 1.0;
    while term.abs() > sum.abs() * 1e-18 && k < 40.0 {
        sum += term;
        term *= -u2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
        k += 1.0;
    }
    sum
}

/// Solves `2δ − sin 2δ = 2π sin²(ψ/2)` for the polar gap δ given the
/// colatitude ψ; both sides are the pole-side form of the auxiliary
/// equation with θ = π/2 − δ and φ = π/2 − ψ.
fn polar_gap(colat: f64) -> f64 {
    if colat <= 0.0 {
        return 0.0;
    }
    let half = (0.5 * colat).sin();
    let target = 2.0 * PI * half * half;
    let (mut lo, mut hi) = (0.0, FRAC_PI_2);
    let mut gap = (0.75 * target).cbrt().min(FRAC_PI_2);
    for _ in 0..MAX_ITER {
        let f = gap_lhs(gap) - target;
        if f < 0.0 {
            lo = gap;
        } else if f > 0.0 {
            hi = gap;
        } else {
            break;
        }
        let s = gap.sin();
        let df = 4.0 * s * s;
        let newton = gap - f / df;
        let next = if df > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if next == gap || (next - gap).abs() <= gap * 1e-17 {
            break;
        }
        gap = next;
    }
    gap
}

/// Projects a geographic point to Mollweide meters on a sphere of `radius`.
pub fn mollweide_forward(p: GeoPoint, radius: f64) -> Result<(f64, f64), GridError> {
    let lambda = p.lon().to_radians();
    let (theta, gap) = aux_angle(p.lat().to_radians())?;
    let x = radius * (2.0 * SQRT_2 / PI) * lambda * gap.sin();
    let y = radius * SQRT_2 * theta.sin();
    Ok((x, y))
}

/// Inverse Mollweide; points outside the projection ellipse are rejected.
pub fn mollweide_inverse(x: f64, y: f64, radius: f64) -> Result<GeoPoint, GridError> {
    let outside = || GridError::OutsideEllipse { x, y };
    if !(x.is_finite() && y.is_finite()) {
        return Err(outside());
    }
    let ymax = SQRT_2 * radius;
    let s = y / ymax;
    if s.abs() > 1.0 + 1e-12 {
        return Err(outside());
    }
    let s = s.clamp(-1.0, 1.0);
    let theta = s.asin();
    let gap = s.abs().acos();
    let lat = if gap < FRAC_PI_2 - POLAR_LAT {
        // colatitude from 2π sin²(ψ/2) = 2δ − sin 2δ
        let colat = 2.0 * (gap_lhs(gap) / (2.0 * PI)).sqrt().min(1.0).asin();
        (FRAC_PI_2 - colat).copysign(s)
    } else {
        ((2.0 * theta + (2.0 * theta).sin()) / PI).clamp(-1.0, 1.0).asin()
    };
    let cos_theta = gap.sin();
    let lambda = if cos_theta <= 1e-15 {
        if x.abs() > 1e-6 {
            return Err(outside());
        }
        0.0
    } else {
        PI * x / (2.0 * SQRT_2 * radius * cos_theta)
    };
    if lambda.abs() > PI * (1.0 + 1e-12) {
        return Err(outside());
    }
    let lon = lambda.to_degrees().clamp(-180.0, 180.0);
    GeoPoint::new(lon, lat.to_degrees().clamp(-90.0, 90.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_grid::DEFAULT_SPHERE_RADIUS as R;
    use proptest::prelude::*;

    /// Bisection on the monotone residual; independent of the Newton path.
    fn bisect_theta(lat: f64) -> f64 {
        let target = PI * lat.sin();
        let (mut lo, mut hi) = (-FRAC_PI_2, FRAC_PI_2);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 2.0 * mid + (2.0 * mid).sin() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn theta_fixed_points() {
        assert_eq!(solve_theta(0.0).unwrap(), 0.0);
        assert_eq!(solve_theta(FRAC_PI_2).unwrap(), FRAC_PI_2);
        assert_eq!(solve_theta(-FRAC_PI_2).unwrap(), -FRAC_PI_2);
    }

    #[test]
    fn theta_at_thirty_degrees_matches_bisection() {
        let lat = 30f64.to_radians();
        let oracle = bisect_theta(lat);
        assert!((oracle - 0.416).abs() < 5e-4, "oracle {oracle}");
        let theta = solve_theta(lat).unwrap();
        assert!((theta - oracle).abs() < 1e-12);
    }

    #[test]
    fn theta_rejects_out_of_range() {
        assert!(solve_theta(1.6).is_err());
        assert!(solve_theta(f64::NAN).is_err());
    }

    #[test]
    fn forward_closed_forms() {
        let (x, y) = mollweide_forward(GeoPoint::new(0.0, 0.0).unwrap(), R).unwrap();
        assert_eq!((x, y), (0.0, 0.0));
        let (x, y) = mollweide_forward(GeoPoint::new(90.0, 0.0).unwrap(), R).unwrap();
        assert!((x - SQRT_2 * R).abs() < 1e-6 && y == 0.0);
        assert!((x - 9.02005e6).abs() < 10.0);
        let (x, y) = mollweide_forward(GeoPoint::new(0.0, 90.0).unwrap(), R).unwrap();
        assert!(x.abs() < 1e-9 && (y - SQRT_2 * R).abs() < 1e-6);
    }

    #[test]
    fn inverse_fixed_points() {
        let p = mollweide_inverse(0.0, 0.0, R).unwrap();
        assert_eq!((p.lon(), p.lat()), (0.0, 0.0));
        let p = mollweide_inverse(0.0, SQRT_2 * R, R).unwrap();
        assert!((p.lat() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_rejects_outside_ellipse() {
        assert!(mollweide_inverse(0.0, 1.5 * R * SQRT_2, R).is_err());
        // on the equator the ellipse spans |x| <= 2√2 R
        assert!(mollweide_inverse(2.0 * SQRT_2 * R * 1.01, 0.0, R).is_err());
    }

    #[test]
    fn rome_round_trip() {
        let p = GeoPoint::new(12.5, 41.9).unwrap();
        let (x, y) = mollweide_forward(p, R).unwrap();
        let q = mollweide_inverse(x, y, R).unwrap();
        let (x2, y2) = mollweide_forward(q, R).unwrap();
        assert!((x - x2).abs() < 1e-6 && (y - y2).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn theta_residual_is_tiny(lat in -FRAC_PI_2..=FRAC_PI_2) {
            let t = solve_theta(lat).unwrap();
            prop_assert!((2.0 * t + (2.0 * t).sin() - PI * lat.sin()).abs() < 1e-12);
            prop_assert!(t.abs() <= FRAC_PI_2);
        }

        #[test]
        fn inverse_then_forward(lon in -179.9f64..179.9, lat in -89.9f64..89.9) {
            let (x, y) = mollweide_forward(GeoPoint::new(lon, lat).unwrap(), R).unwrap();
            let q = mollweide_inverse(x, y, R).unwrap();
            prop_assert!((q.lon() - lon).abs() < 1e-9);
            prop_assert!((q.lat() - lat).abs() < 1e-9);
        }

        #[test]
        fn polar_round_trip_in_meters(lon in -180.0f64..=180.0, lat in 80.0f64..=89.99999, south in any::<bool>()) {
            let lat = if south { -lat } else { lat };
            let (x, y) = mollweide_forward(GeoPoint::new(lon, lat).unwrap(), R).unwrap();
            let q = mollweide_inverse(x, y, R).unwrap();
            let (x2, y2) = mollweide_forward(q, R).unwrap();
            prop_assert!((x2 - x).hypot(y2 - y) < 1e-6);
        }

        #[test]
        fn polar_gap_matches_direct_form(colat in 1e-6f64..POLAR_LAT) {
            let gap = polar_gap(colat);
            let theta = FRAC_PI_2 - gap;
            let r = 2.0 * theta + (2.0 * theta).sin() - PI * (FRAC_PI_2 - colat).sin();
            prop_assert!(r.abs() < 1e-13);
            prop_assert!((theta - bisect_theta(FRAC_PI_2 - colat)).abs() < 1e-9);
        }
    }
}
