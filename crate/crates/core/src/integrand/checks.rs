//! Sample-level checks of structural assumptions and the Luxemburg gauge.

use serde::{Deserialize, Serialize};

use crate::matrix::Mat;

use super::{Integrand, IntegrandSpec, MaterialState};

/// Empirical constants for an inequality `W(s, ξ̃) ≤ C·W(s, ξ) + Λ` over a sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    /// `sup W(ξ̃)/W(ξ)` over pairs with `W(ξ) > 0` (so `Λ = 0`).
    pub max_ratio: f64,
    /// `sup (W(ξ̃) − W(ξ))⁺`, the offset needed with `C = 1`.
    pub max_offset: f64,
    /// Pairs with `W(ξ) = 0 < W(ξ̃)`: no finite ratio exists.
    pub unbounded: usize,
    pub pairs: usize,
}

impl PairReport {
    fn record(&mut self, lhs: f64, rhs: f64) {
        self.pairs += 1;
        self.max_offset = self.max_offset.max(lhs - rhs);
        if rhs > 0.0 {
            self.max_ratio = self.max_ratio.max(lhs / rhs);
        } else if lhs > 0.0 {
            self.unbounded += 1;
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.unbounded == 0 && self.max_ratio.is_finite()
    }
}

/// Row-zeroing comparison: for every sampled `ξ` and each of the `2^m` masks,
/// compares `W(s, ξ̃)` against `W(s, ξ)`.
pub fn check_mild_monotonicity<I: Integrand + ?Sized>(
    w: &I,
    s_samples: &[MaterialState],
    xi_samples: &[Mat],
) -> PairReport {
    let mut report = PairReport::default();
    for s in s_samples {
        for xi in xi_samples {
            let base = w.value(s, xi.as_slice());
            for mask in 0..(1u32 << xi.rows()) {
                let reduced = xi.zero_rows(mask);
                report.record(w.value(s, reduced.as_slice()), base);
            }
        }
    }
    report
}

/// Sign-flip comparison `W(s, ξ)` against `W(s, −ξ)`; the report's constants
/// satisfy `W(s, −ξ) ≥ W(s, ξ)/C − Λ/C` on the sample.
pub fn check_almost_even<I: Integrand + ?Sized>(
    w: &I,
    s_samples: &[MaterialState],
    xi_samples: &[Mat],
) -> PairReport {
    let mut report = PairReport::default();
    for s in s_samples {
        for xi in xi_samples {
            let flipped = xi.scaled(-1.0);
            report.record(w.value(s, xi.as_slice()), w.value(s, flipped.as_slice()));
        }
    }
    report
}

/// `inf{α > 0 : Σ_e vol_e φ(s_e, g_e/α) ≤ 1}` by bisection.
pub fn luxemburg_norm(phi: &IntegrandSpec, states: &[MaterialState], g: &[Mat], volumes: &[f64]) -> f64 {
    assert_eq!(states.len(), g.len());
    assert_eq!(g.len(), volumes.len());
    if g.iter().zip(volumes).all(|(m, &v)| v == 0.0 || m.norm() == 0.0) {
        return 0.0;
    }
    let modular = |alpha: f64| -> f64 {
        states
            .iter()
            .zip(g)
            .zip(volumes)
            .map(|((s, m), &v)| v * phi.profile(s, m.norm() / alpha))
            .sum()
    };
    let (mut lo, mut hi) = (1.0_f64, 1.0_f64);
    while modular(hi) > 1.0 {
        hi *= 2.0;
    }
    while modular(lo) <= 1.0 && lo > 1e-300 {
        lo *= 0.5;
    }
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if modular(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
