//! Sampled radial functions and their convex, monotone envelopes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A function of `r ≥ 0` given by samples, interpolated linearly and extended
/// linearly with `tail_slope` beyond the last sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialFunction {
    radii: Vec<f64>,
    values: Vec<f64>,
    tail_slope: f64,
}

impl RadialFunction {
    pub fn new(radii: Vec<f64>, values: Vec<f64>, tail_slope: f64) -> Result<Self> {
        if radii.is_empty() || radii.len() != values.len() {
            return Err(Error::param("radial samples must be nonempty and paired"));
        }
        if radii[0] != 0.0 {
            return Err(Error::param("radial samples must start at r = 0"));
        }
        if radii.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("sample radii must be strictly increasing"));
        }
        if radii.iter().chain(&values).any(|v| !v.is_finite()) || !tail_slope.is_finite() {
            return Err(Error::param("radial samples must be finite"));
        }
        Ok(RadialFunction {
            radii,
            values,
            tail_slope,
        })
    }

    /// Samples `f` at the given radii; the tail slope is the last secant slope.
    pub fn from_fn(radii: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = radii.iter().map(|&r| f(r)).collect();
        let n = radii.len();
        let tail = if n >= 2 {
            (values[n - 1] - values[n - 2]) / (radii[n - 1] - radii[n - 2])
        } else {
            0.0
        };
        Self::new(radii, values, tail)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_slope(&self) -> f64 {
        self.tail_slope
    }

    pub fn eval(&self, r: f64) -> f64 {
        let n = self.radii.len();
        let last = self.radii[n - 1];
        if r >= last {
            return self.values[n - 1] + self.tail_slope * (r - last);
        }
        if r <= 0.0 {
            return self.values[0];
        }
        let j = self.radii.partition_point(|&x| x <= r);
        let (r0, r1) = (self.radii[j - 1], self.radii[j]);
        let (v0, v1) = (self.values[j - 1], self.values[j]);
        let t = (r - r0) / (r1 - r0);
        v0 + t * (v1 - v0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest sample radius attaining the minimum.
    pub fn largest_minimizer(&self) -> f64 {
        let m = self.min_value();
        let j = self.values.iter().rposition(|&v| v == m).unwrap_or(0);
        self.radii[j]
    }
}

/// Convex envelope of `ξ ↦ ℓ(|ξ|)` on `R^k`, returned as a radial function.
///
/// The envelope equals `ℓ(r_max)` on `[0, r_max]`, where `r_max` is the largest
/// minimizer, and the lower convex hull of the sampled epigraph beyond it. It
/// does not depend on `k_dim`; the argument only records the ambient dimension.
pub fn radial_convex_envelope(ell: &RadialFunction, k_dim: usize) -> Result<RadialFunction> {
    if k_dim == 0 {
        return Err(Error::param("ambient dimension must be positive"));
    }
    if ell.tail_slope < 0.0 {
        return Err(Error::Domain(format!(
            "radial function is not coercive (tail slope {})",
            ell.tail_slope
        )));
    }
    let min = ell.min_value();
    let n = ell.radii.len();
    if ell.tail_slope == 0.0 {
        // bounded but flat at infinity: no convex minorant can exceed the minimum
        return RadialFunction::new(ell.radii.clone(), vec![min; n], 0.0);
    }

    let start = ell.values.iter().rposition(|&v| v == min).unwrap_or(0);

    // Andrew's monotone chain, lower hull only; points are already sorted in r.
    let mut hull: Vec<usize> = Vec::with_capacity(n - start);
    for i in start..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            if cross(ell, a, b, i) < 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    // The linear tail acts as a point at infinity with slope `tail_slope`.
    while hull.len() >= 2 {
        let a = hull[hull.len() - 2];
        let b = hull[hull.len() - 1];
        let s = (ell.values[b] - ell.values[a]) / (ell.radii[b] - ell.radii[a]);
        if s > ell.tail_slope {
            hull.pop();
        } else {
            break;
        }
    }

    let mut values = vec![min; n];
    let last_vertex = *hull.last().expect("hull contains the minimizer");
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ra, rb) = (ell.radii[a], ell.radii[b]);
        let (va, vb) = (ell.values[a], ell.values[b]);
        values[a] = va;
        for i in a + 1..b {
            let t = (ell.radii[i] - ra) / (rb - ra);
            values[i] = va + t * (vb - va);
        }
        values[b] = vb;
    }
    let (rl, vl) = (ell.radii[last_vertex], ell.values[last_vertex]);
    for i in last_vertex..n {
        values[i] = vl + ell.tail_slope * (ell.radii[i] - rl);
    }
    RadialFunction::new(ell.radii.clone(), values, ell.tail_slope)
}

// z-component of (b − a) × (c − a); positive when a → b → c turns left.
fn cross(f: &RadialFunction, a: usize, b: usize, c: usize) -> f64 {
    let (xa, ya) = (f.radii[a], f.values[a]);
    let (xb, yb) = (f.radii[b], f.values[b]);
    let (xc, yc) = (f.radii[c], f.values[c]);
    (xb - xa) * (yc - ya) - (yb - ya) * (xc - xa)
}
