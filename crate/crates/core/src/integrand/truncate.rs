//! Monotone approximation of an integrand from below by integrands of
//! controlled `q`-growth: `W_k = max(max_{i<k} (a_i + ⟨b_i, ξ⟩), ℓ̃(|ξ|))`.
//!
//! The affine pieces are supporting planes of `W(s, ·)` at a fixed nested
//! sequence of probe points, so `W_k ≤ W_{k+1} ≤ W`. The radial floor `ℓ̃` is
//! the convex envelope of `min{ψ_s(r), r^q/q}`, assembled as an upper envelope
//! of exact affine minorants `β r − g*(β)` with
//! `g*(β) = max{ψ_s*(β), β^{q'}/q'}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Mat};

use super::radial::{radial_convex_envelope, RadialFunction};
use super::{IntegrandSpec, MaterialState};

/// Number of dyadic radius levels cycled through by the probe sequence.
const PROBE_LEVELS: usize = 6;

const CONJUGATE_RADIUS: f64 = 1e8;

/// The `i`-th probe point in `R^{rows×cols}`.
///
/// Probe `i` lies in the sup-norm ball of radius `2^{(i mod 6) − 2}`, at the
/// Halton point of index `⌊i/6⌋ + 1`. Prefixes of the sequence are nested.
pub fn probe_point(i: usize, rows: usize, cols: usize) -> Mat {
    let level = (i % PROBE_LEVELS) as i32;
    let radius = 2f64.powi(level - 2);
    let index = (i / PROBE_LEVELS + 1) as u64;
    let n = rows * cols;
    let data = (0..n)
        .map(|k| radius * (2.0 * radical_inverse(index, PRIMES[k % PRIMES.len()]) - 1.0))
        .collect();
    let mut m = Mat::from_vec(rows, cols, data).expect("nonempty shape");
    // Index 1 in base 2 maps to 0 in the centered cube; keep probes off the origin.
    if m.norm() == 0.0 {
        m.as_mut_slice()[0] = radius;
    }
    m
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Truncation data for one material state.
#[derive(Clone, Debug)]
pub struct StateTruncation {
    pub state: MaterialState,
    /// `(a_i, b_i)` supporting planes, in probe order.
    pub pieces: Vec<(f64, Mat)>,
    pub floor: RadialFunction,
    /// `W_k(s, ξ) ≤ c_k (1 + |ξ|^q)`.
    pub c_k: f64,
}

impl StateTruncation {
    pub fn eval(&self, xi: &Mat) -> f64 {
        let affine = self
            .pieces
            .iter()
            .map(|(a, b)| a + dot(b.as_slice(), xi.as_slice()))
            .fold(f64::NEG_INFINITY, f64::max);
        affine.max(self.floor.eval(xi.norm()))
    }
}

#[derive(Clone, Debug)]
pub struct TruncatedIntegrand {
    pub base: IntegrandSpec,
    pub k: usize,
    pub q: f64,
    pub states: Vec<StateTruncation>,
}

impl TruncatedIntegrand {
    /// `W_k(s_j, ξ)` for the `j`-th sampled state.
    pub fn eval(&self, sample: usize, xi: &Mat) -> f64 {
        self.states[sample].eval(xi)
    }

    /// Largest growth constant over the sampled states.
    pub fn c_k(&self) -> f64 {
        self.states.iter().map(|s| s.c_k).fold(0.0, f64::max)
    }
}

pub fn truncate_integrand(
    spec: &IntegrandSpec,
    s_samples: &[MaterialState],
    k: usize,
    q: f64,
) -> Result<TruncatedIntegrand> {
    let d = spec.cols as f64;
    let q_max = if spec.cols == 1 { f64::INFINITY } else { d / (d - 1.0) };
    if !(q > 1.0 && q < q_max) {
        return Err(Error::param(format!("need 1 < q < {q_max}, got {q}")));
    }
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let probes: Vec<Mat> = (0..k).map(|i| probe_point(i, spec.rows, spec.cols)).collect();
    let states = s_samples
        .iter()
        .map(|s| truncate_state(spec, s, &probes, q))
        .collect::<Result<Vec<_>>>()?;
    Ok(TruncatedIntegrand {
        base: spec.clone(),
        k,
        q,
        states,
    })
}

/// Violation counts of `W_k ≤ W_{k'} ≤ W` (for `k < k'`) and of the growth
/// bound `W_k ≤ c_k (1 + |ξ|^q)` on a sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub monotonicity_violations: usize,
    pub upper_violations: usize,
    pub growth_violations: usize,
    /// Levels whose sup-gap `max (W − W_k)` exceeds the previous level's.
    pub gap_violations: usize,
    /// Sup-gap per level over the sample.
    pub sup_gaps: Vec<f64>,
    pub evaluations: usize,
}

impl TruncationReport {
    pub fn violations(&self) -> usize {
        self.monotonicity_violations + self.upper_violations + self.growth_violations + self.gap_violations
    }
}

/// Evaluates the truncation sequence over increasing `ks` on every sampled
/// state and `ξ`, counting violations beyond a relative round-off slack.
pub fn check_truncation(
    spec: &IntegrandSpec,
    s_samples: &[MaterialState],
    ks: &[usize],
    q: f64,
    xi_samples: &[Mat],
) -> Result<TruncationReport> {
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("truncation levels must be strictly increasing"));
    }
    let levels = ks
        .iter()
        .map(|&k| truncate_integrand(spec, s_samples, k, q))
        .collect::<Result<Vec<_>>>()?;
    let slack = |v: f64| 1e-10 * (1.0 + v.abs());
    let mut report = TruncationReport {
        sup_gaps: vec![0.0; levels.len()],
        ..Default::default()
    };
    for (j, s) in s_samples.iter().enumerate() {
        for xi in xi_samples {
            let w = spec.eval(s, xi)?;
            let mut prev = f64::NEG_INFINITY;
            for (l, level) in levels.iter().enumerate() {
                let st = &level.states[j];
                let v = st.eval(xi);
                report.evaluations += 1;
                report.sup_gaps[l] = report.sup_gaps[l].max(w - v);
                if v < prev - slack(prev) {
                    report.monotonicity_violations += 1;
                }
                if v > w + slack(w) {
                    report.upper_violations += 1;
                }
                let bound = st.c_k * (1.0 + xi.norm().powf(q));
                if v > bound + slack(bound) {
                    report.growth_violations += 1;
                }
                prev = v;
            }
        }
    }
    report.gap_violations = report
        .sup_gaps
        .windows(2)
        .filter(|g| g[1] > g[0] + 1e-10 * (1.0 + g[0].abs()))
        .count();
    Ok(report)
}

fn truncate_state(spec: &IntegrandSpec, s: &MaterialState, probes: &[Mat], q: f64) -> Result<StateTruncation> {
    spec.check_state(s)?;
    let mut pieces = Vec::with_capacity(probes.len());
    for xi in probes {
        let w = spec.eval(s, xi)?;
        let b = spec.grad_xi(s, xi)?;
        let a = w - b.dot(xi);
        if a.is_finite() && b.is_finite() {
            pieces.push((a, b));
        }
    }
    let floor = radial_floor(spec, s, q)?;
    let a_max = pieces.iter().map(|(a, _)| a.abs()).fold(0.0, f64::max);
    let b_max = pieces.iter().map(|(_, b)| b.norm()).fold(0.0, f64::max);
    Ok(StateTruncation {
        state: *s,
        pieces,
        floor,
        c_k: (a_max + b_max).max(1.0),
    })
}

fn radial_floor(spec: &IntegrandSpec, s: &MaterialState, q: f64) -> Result<RadialFunction> {
    let q_dual = q / (q - 1.0);
    // lines β r − g*(β); β = 0 contributes the constant 0 = min g
    let mut lines: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for j in -48..=48 {
        let beta = 2f64.powf(j as f64 / 4.0);
        let psi_star = match spec.radial_conjugate(s, beta, CONJUGATE_RADIUS) {
            Ok(v) => v,
            Err(Error::RadiusTooSmall { .. }) => continue,
            Err(e) => return Err(e),
        };
        let power_star = beta.powf(q_dual) / q_dual;
        let g_star = psi_star.max(power_star);
        // guard against round-off in the conjugate pushing a line above g
        let g_star = g_star + 1e-13 * (1.0 + g_star.abs());
        lines.push((beta, -g_star));
    }
    let env = upper_envelope(&lines);
    let floor = RadialFunction::new(env.0, env.1, env.2)?;
    radial_convex_envelope(&floor, spec.dim())
}

/// Upper envelope on `[0, ∞)` of lines `(slope, intercept)` sorted by slope,
/// returned as breakpoints, values and the final slope.
fn upper_envelope(lines: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>, f64) {
    let mut hull: Vec<(f64, f64)> = Vec::new();
    let at = |l: (f64, f64), r: f64| l.0 * r + l.1;
    let meet = |a: (f64, f64), b: (f64, f64)| (a.1 - b.1) / (b.0 - a.0);
    for &l in lines {
        if let Some(&last) = hull.last() {
            if l.0 == last.0 {
                if l.1 <= last.1 {
                    continue;
                }
                hull.pop();
            }
        }
        while let Some(&last) = hull.last() {
            // the newest line dominates everything on [0, ∞) the last line covered
            let start = if hull.len() >= 2 { meet(hull[hull.len() - 2], last) } else { 0.0 };
            if at(l, start) >= at(last, start) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(l);
    }
    let mut radii = vec![0.0];
    let mut values = vec![at(hull[0], 0.0)];
    for w in hull.windows(2) {
        let r = meet(w[0], w[1]);
        if r > *radii.last().unwrap() {
            radii.push(r);
            values.push(at(w[1], r).max(at(w[0], r)));
        }
    }
    (radii, values, hull.last().unwrap().0)
}
