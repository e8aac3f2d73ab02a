//! Sample summaries and the `μ(t) = μ_∞ + c/t` extrapolation fit.

use serde::{Deserialize, Serialize};

pub use crate::matrix::pairwise_sum;

/// Mean and standard error of the mean; the error is 0 for fewer than two samples.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InverseFit {
    pub limit: f64,
    pub slope: f64,
    /// Weighted root-mean-square residual of the fit.
    pub residual: f64,
}

/// Weighted least squares for `y(t) = limit + slope/t`, weights `1/se²`.
///
/// Falls back to equal weights when any standard error vanishes, and to the
/// last value when fewer than two distinct `t` are given.
pub fn fit_inverse_t(ts: &[f64], ys: &[f64], stderrs: &[f64]) -> InverseFit {
    assert_eq!(ts.len(), ys.len());
    assert_eq!(ts.len(), stderrs.len());
    let n = ts.len();
    let distinct = ts.windows(2).any(|w| w[0] != w[1]);
    if n < 2 || !distinct {
        let limit = ys.last().copied().unwrap_or(f64::NAN);
        return InverseFit {
            limit,
            slope: 0.0,
            residual: 0.0,
        };
    }
    let weights: Vec<f64> = if stderrs.iter().all(|&s| s > 0.0) {
        stderrs.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; n]
    };
    let xs: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
    let sw: f64 = weights.iter().sum();
    let mx = weights.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = weights.iter().zip(ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = weights.iter().zip(&xs).map(|(w, x)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = weights
        .iter()
        .zip(&xs)
        .zip(ys)
        .map(|((w, x), y)| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let limit = my - slope * mx;
    let ss: f64 = weights
        .iter()
        .zip(&xs)
        .zip(ys)
        .map(|((w, x), y)| w * (y - limit - slope * x).powi(2))
        .sum();
    InverseFit {
        limit,
        slope,
        residual: (ss / sw).sqrt(),
    }
}
