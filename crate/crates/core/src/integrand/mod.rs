//! Convex integrand families `W(s, ξ)` and the operations built on them.
//!
//! Every family is radial in the Frobenius norm `r = |ξ|`:
//!
//! | family        | profile `ψ(r)`                  | state parameter |
//! |---------------|---------------------------------|-----------------|
//! | quadratic     | `a r²/2`                        | `coeff = a`     |
//! | power         | `a r^p/p` (fixed `p`)           | `coeff = a`     |
//! | random power  | `r^p/p`                         | `exponent = p`  |
//! | double phase  | `r^p + a r^q`                   | `coeff = a`     |
//! | exp phase     | `r^p + a (exp(r^q) − 1)`        | `coeff = a`     |
//!
//! so `W(s, ξ) = ψ_s(|ξ|)` and `∂ξW(s, ξ) = ψ_s'(|ξ|) ξ / |ξ|`.

mod checks;
mod radial;
mod truncate;

pub use checks::{check_almost_even, check_mild_monotonicity, luxemburg_norm, PairReport};
pub use radial::{radial_convex_envelope, RadialFunction};
pub use truncate::{check_truncation, probe_point, truncate_integrand, TruncationReport, StateTruncation, TruncatedIntegrand};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre;
use crate::matrix::{dot, norm, Mat};

/// Per-point random parameters of an integrand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialState {
    /// Nonnegative coefficient `a(x)`.
    #[serde(default = "default_coeff")]
    pub coeff: f64,
    /// Exponent `p(x) > 1`, read only by the random-power family.
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

fn default_coeff() -> f64 {
    1.0
}

fn default_exponent() -> f64 {
    2.0
}

impl Default for MaterialState {
    fn default() -> Self {
        MaterialState {
            coeff: 1.0,
            exponent: 2.0,
        }
    }
}

impl MaterialState {
    pub fn with_coeff(coeff: f64) -> Self {
        MaterialState {
            coeff,
            ..Default::default()
        }
    }

    pub fn with_exponent(exponent: f64) -> Self {
        MaterialState {
            exponent,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Quadratic,
    Power { p: f64 },
    RandomPower,
    DoublePhase { p: f64, q: f64 },
    ExpPhase { p: f64, q: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrandSpec {
    #[serde(flatten)]
    pub family: Family,
    /// Target dimension `m`.
    pub rows: usize,
    /// Space dimension `d`.
    pub cols: usize,
}

/// Pointwise access to a convex integrand, as consumed by assembly and the
/// assumption checkers.
pub trait Integrand: Send + Sync {
    fn value(&self, state: &MaterialState, xi: &[f64]) -> f64;

    /// Writes `∂ξW` into `grad` and returns `W`.
    fn value_and_gradient(&self, state: &MaterialState, xi: &[f64], grad: &mut [f64]) -> f64;

    fn validate_state(&self, _state: &MaterialState) -> Result<()> {
        Ok(())
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    /// The Huber-smoothed integrand at level `delta`, or `None` when smoothing
    /// would not help the solver.
    fn smoothing(&self, _delta: f64) -> Option<Arc<dyn Integrand>> {
        None
    }

    /// Largest diagonal entry of `∂²ξW`, by central differences of the
    /// gradient. Only used to precondition the solver.
    fn curvature(&self, state: &MaterialState, xi: &[f64]) -> f64 {
        let n = xi.len();
        let h = 1e-6 * (1.0 + norm(xi));
        let mut x = xi.to_vec();
        let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
        let mut out: f64 = 0.0;
        for k in 0..n {
            x[k] = xi[k] + h;
            self.value_and_gradient(state, &x, &mut gp);
            x[k] = xi[k] - h;
            self.value_and_gradient(state, &x, &mut gm);
            x[k] = xi[k];
            let c = (gp[k] - gm[k]) / (2.0 * h);
            if c.is_finite() {
                out = out.max(c);
            }
        }
        out
    }
}

impl IntegrandSpec {
    pub fn new(family: Family, rows: usize, cols: usize) -> Result<Self> {
        let spec = IntegrandSpec { family, rows, cols };
        spec.validate()?;
        Ok(spec)
    }

    pub fn scalar(family: Family, d: usize) -> Result<Self> {
        Self::new(family, 1, d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::param("integrand dimensions must be positive"));
        }
        if self.rows > 16 {
            return Err(Error::param("at most 16 rows are supported"));
        }
        match self.family {
            Family::Quadratic | Family::RandomPower => Ok(()),
            Family::Power { p } if p > 1.0 && p.is_finite() => Ok(()),
            Family::Power { p } => Err(Error::param(format!("power family needs p > 1, got {p}"))),
            Family::DoublePhase { p, q } if p > 1.0 && q >= 1.0 && p.is_finite() && q.is_finite() => Ok(()),
            Family::DoublePhase { p, q } => Err(Error::param(format!(
                "double-phase family needs p > 1 and q ≥ 1, got p={p}, q={q}"
            ))),
            Family::ExpPhase { p, q } if p > 1.0 && q >= 1.0 && p.is_finite() && q.is_finite() => Ok(()),
            Family::ExpPhase { p, q } => Err(Error::param(format!(
                "exp-phase family needs p > 1 and q ≥ 1, got p={p}, q={q}"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn check_state(&self, s: &MaterialState) -> Result<()> {
        if !(s.coeff >= 0.0 && s.coeff.is_finite()) {
            return Err(Error::param(format!("coefficient must be finite and ≥ 0, got {}", s.coeff)));
        }
        if matches!(self.family, Family::RandomPower) && !(s.exponent > 1.0 && s.exponent.is_finite()) {
            return Err(Error::param(format!("exponent must exceed 1, got {}", s.exponent)));
        }
        Ok(())
    }

    fn check_xi(&self, xi: &Mat) -> Result<()> {
        if xi.rows() != self.rows || xi.cols() != self.cols {
            return Err(Error::Shape {
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", xi.rows(), xi.cols()),
            });
        }
        if !xi.is_finite() {
            return Err(Error::param("ξ must be finite"));
        }
        Ok(())
    }

    /// Radial profile `ψ_s(r)`. Overflow yields `+∞`.
    pub fn profile(&self, s: &MaterialState, r: f64) -> f64 {
        let a = s.coeff;
        match self.family {
            Family::Quadratic => 0.5 * a * r * r,
            Family::Power { p } => a * r.powf(p) / p,
            Family::RandomPower => r.powf(s.exponent) / s.exponent,
            Family::DoublePhase { p, q } => r.powf(p) + phase(a, r.powf(q)),
            Family::ExpPhase { p, q } => r.powf(p) + phase(a, r.powf(q).exp_m1()),
        }
    }

    /// Derivative `ψ_s'(r)`; one-sided at `r = 0`.
    pub fn profile_derivative(&self, s: &MaterialState, r: f64) -> f64 {
        let a = s.coeff;
        match self.family {
            Family::Quadratic => a * r,
            Family::Power { p } => a * r.powf(p - 1.0),
            Family::RandomPower => r.powf(s.exponent - 1.0),
            Family::DoublePhase { p, q } => p * r.powf(p - 1.0) + phase(a, q * r.powf(q - 1.0)),
            Family::ExpPhase { p, q } => {
                p * r.powf(p - 1.0) + phase(a, q * r.powf(q - 1.0) * r.powf(q).exp())
            }
        }
    }

    /// True when `ξ ↦ W(s, ξ)` is differentiable everywhere for every valid state.
    pub fn is_differentiable(&self) -> bool {
        !matches!(self.family, Family::DoublePhase { q, .. } if q <= 1.0)
    }

    pub fn eval(&self, s: &MaterialState, xi: &Mat) -> Result<f64> {
        self.check_xi(xi)?;
        self.check_state(s)?;
        Ok(self.profile(s, xi.norm()))
    }

    pub fn grad_xi(&self, s: &MaterialState, xi: &Mat) -> Result<Mat> {
        self.check_xi(xi)?;
        self.check_state(s)?;
        let r = xi.norm();
        if r == 0.0 {
            let slope = self.profile_derivative(s, 0.0);
            if slope != 0.0 {
                return Err(Error::Nonsmooth(format!(
                    "{:?} has a cone point at ξ = 0 with slope {slope}",
                    self.family
                )));
            }
            return Ok(Mat::zeros(self.rows, self.cols));
        }
        Ok(xi.scaled(self.profile_derivative(s, r) / r))
    }

    /// `sup_{|ξ| ≤ radius} (⟨η, ξ⟩ − W(s, ξ))`.
    pub fn conjugate(&self, s: &MaterialState, eta: &Mat, radius: f64) -> Result<f64> {
        self.check_xi(eta)?;
        self.check_state(s)?;
        self.radial_conjugate(s, eta.norm(), radius)
    }

    /// Conjugate of the radial profile at slope `|η|`.
    pub fn radial_conjugate(&self, s: &MaterialState, slope: f64, radius: f64) -> Result<f64> {
        if slope == 0.0 {
            return Ok(-self.profile(s, 0.0));
        }
        // Pure powers a r^p / p have the closed form (|η|/a)^{1/(p-1)} |η| (1 - 1/p).
        let power = match self.family {
            Family::Quadratic => Some((s.coeff, 2.0)),
            Family::Power { p } => Some((s.coeff, p)),
            Family::RandomPower => Some((1.0, s.exponent)),
            _ => None,
        };
        if let Some((a, p)) = power {
            if a == 0.0 {
                return Err(Error::RadiusTooSmall { radius });
            }
            let r_star = (slope / a).powf(1.0 / (p - 1.0));
            if r_star > radius {
                return Err(Error::RadiusTooSmall { radius });
            }
            return Ok(r_star * slope * (1.0 - 1.0 / p));
        }
        legendre::radial_conjugate(|r| self.profile(s, r), slope, radius)
    }

    /// Huber-type smoothing `r ↦ sqrt(r² + δ²) − δ` inside the profile.
    pub fn smoothed(&self, delta: f64) -> Smoothed {
        Smoothed {
            spec: self.clone(),
            delta,
        }
    }

    /// Profiles with an exponent below 2 have unbounded curvature or a cone
    /// point at the origin.
    pub fn needs_smoothing(&self) -> bool {
        match self.family {
            Family::Quadratic => false,
            Family::Power { p } => p < 2.0,
            Family::RandomPower => true,
            Family::DoublePhase { p, q } | Family::ExpPhase { p, q } => p < 2.0 || q < 2.0,
        }
    }
}

// 0 · ∞ is taken as 0 so that vanishing coefficients switch a phase off.
fn phase(a: f64, v: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * v
    }
}

impl Integrand for IntegrandSpec {
    fn value(&self, state: &MaterialState, xi: &[f64]) -> f64 {
        self.profile(state, norm(xi))
    }

    fn value_and_gradient(&self, state: &MaterialState, xi: &[f64], grad: &mut [f64]) -> f64 {
        let r = norm(xi);
        let value = self.profile(state, r);
        if r == 0.0 {
            grad.fill(0.0);
        } else {
            let f = self.profile_derivative(state, r) / r;
            for (g, x) in grad.iter_mut().zip(xi) {
                *g = f * x;
            }
        }
        value
    }

    fn validate_state(&self, state: &MaterialState) -> Result<()> {
        self.check_state(state)
    }

    fn is_differentiable(&self) -> bool {
        IntegrandSpec::is_differentiable(self)
    }

    fn smoothing(&self, delta: f64) -> Option<Arc<dyn Integrand>> {
        (delta > 0.0 && self.needs_smoothing()).then(|| Arc::new(self.smoothed(delta)) as Arc<dyn Integrand>)
    }
}

/// An integrand with `|ξ|` replaced by `sqrt(|ξ|² + δ²) − δ`.
#[derive(Clone, Debug)]
pub struct Smoothed {
    spec: IntegrandSpec,
    delta: f64,
}

impl Integrand for Smoothed {
    fn value(&self, state: &MaterialState, xi: &[f64]) -> f64 {
        let rr = dot(xi, xi);
        let rho = (rr + self.delta * self.delta).sqrt() - self.delta;
        self.spec.profile(state, rho)
    }

    fn value_and_gradient(&self, state: &MaterialState, xi: &[f64], grad: &mut [f64]) -> f64 {
        let rr = dot(xi, xi);
        let hyp = (rr + self.delta * self.delta).sqrt();
        let rho = hyp - self.delta;
        let value = self.spec.profile(state, rho);
        if hyp == 0.0 {
            grad.fill(0.0);
        } else {
            let f = self.spec.profile_derivative(state, rho) / hyp;
            for (g, x) in grad.iter_mut().zip(xi) {
                *g = f * x;
            }
        }
        value
    }

    fn validate_state(&self, state: &MaterialState) -> Result<()> {
        self.spec.check_state(state)
    }
}
