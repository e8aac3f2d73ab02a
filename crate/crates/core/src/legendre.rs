//! One-dimensional Legendre–Fenchel transforms.
//!
//! Every integrand family in this crate is radial, so conjugates reduce to
//! `sup_{0 ≤ r ≤ R} (r·|η| − ψ(r))`, a concave maximization on a half line.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes a concave function on `[0, radius]`.
///
/// The bracket is grown by doubling from `r = 1` until the function starts
/// decreasing, then refined by golden-section search. Fails with
/// [`Error::RadiusTooSmall`] when the maximum sits on the outer boundary.
pub fn maximize_concave<F>(g: F, radius: f64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    if !(radius > 0.0) {
        return Err(Error::param(format!("search radius must be positive, got {radius}")));
    }
    let eval = |r: f64| {
        let v = g(r);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut hi = radius.min(1.0);
    while hi < radius && eval((2.0 * hi).min(radius)) >= eval(hi) {
        hi = (2.0 * hi).min(radius);
    }
    let hi = if hi < radius { (2.0 * hi).min(radius) } else { radius };

    let (mut a, mut b) = (0.0_f64, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    for _ in 0..400 {
        if b - a <= 1e-15 * (1.0 + b.abs()) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1);
        }
    }
    let mut best = (x1, f1);
    for cand in [a, b, x2] {
        let v = eval(cand);
        if v > best.1 {
            best = (cand, v);
        }
    }

    // A maximizer pinned to the outer boundary means the true supremum may lie beyond it.
    let edge = radius * (1.0 - 1e-9);
    if best.0 >= edge && eval(radius) > eval(edge) {
        return Err(Error::RadiusTooSmall { radius });
    }
    Ok(best)
}

/// `sup_{0 ≤ r ≤ radius} (r·slope − psi(r))` for a convex profile `psi`.
pub fn radial_conjugate<F>(psi: F, slope: f64, radius: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let slope = slope.abs();
    maximize_concave(|r| r * slope - psi(r), radius).map(|(_, v)| v)
}

/// Conjugate of a function known only at sample points:
/// `max_j (η·x_j − f_j)`. Sample points must cover the maximizer.
pub fn discrete_conjugate(points: &[(f64, f64)], eta: f64) -> f64 {
    points
        .iter()
        .map(|&(x, f)| eta * x - f)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_conjugate() {
        let v = radial_conjugate(|r| 0.5 * r * r, 1.0, 100.0).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let v = radial_conjugate(|r| 0.5 * r * r, 30.0, 100.0).unwrap();
        assert!((v - 450.0).abs() < 1e-8);
    }

    #[test]
    fn small_maximizer_resolved() {
        // maximizer at r = 1e-6
        let v = radial_conjugate(|r| 0.5e6 * r * r, 1.0, 10.0).unwrap();
        assert!((v - 0.5e-6).abs() < 1e-15);
    }

    #[test]
    fn boundary_maximum_is_an_error() {
        let err = radial_conjugate(|r| 0.5 * r * r, 5.0, 2.0).unwrap_err();
        assert!(matches!(err, Error::RadiusTooSmall { .. }));
    }

    #[test]
    fn overflowing_profile_is_handled() {
        let v = radial_conjugate(|r| (r * r * r).exp() - 1.0, 1.0, 1e6).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn discrete_conjugate_picks_best_sample() {
        let pts: Vec<(f64, f64)> = (0..=200).map(|i| {
            let x = i as f64 * 0.01;
            (x, x * x)
        }).collect();
        assert!((discrete_conjugate(&pts, 1.0) - 0.25).abs() < 1e-12);
    }
}
