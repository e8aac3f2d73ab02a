//! Radial cut-off functions adapted to a family of fields on an annulus.
//!
//! The annulus `(1−δ)R < |x − c| < R` is binned into shells. A shell is
//! *good* when, for every field, its sphere-averaged `|∇u_i|^p` and `|u_i|^p`
//! stay below `C/(δR)` times the annulus totals, with `C = 4N`. By Chebyshev
//! each of the `2N` conditions excludes less than `δR/C` of radii, so the good
//! set `U` has measure at least `δR/2`. The cut-off descends linearly in
//! measure over `U` only.

use serde::{Deserialize, Serialize};

use crate::discretize::{DiscreteField, Mesh};
use crate::error::{Error, Result};
use crate::random_field::hash_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusData {
    pub radius: f64,
    pub delta: f64,
    pub center: Vec<f64>,
    /// Shell boundaries from `(1−δ)R` to `R`.
    pub edges: Vec<f64>,
    /// `∫_shell |∇u_i|^p`, one row per field.
    pub grad_integrals: Vec<Vec<f64>>,
    /// `∫_shell |u_i|^p`, one row per field.
    pub value_integrals: Vec<Vec<f64>>,
}

impl AnnulusData {
    pub fn n_fields(&self) -> usize {
        self.grad_integrals.len()
    }

    pub fn n_shells(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn width(&self, j: usize) -> f64 {
        self.edges[j + 1] - self.edges[j]
    }

    /// Equal-width shells with the given integrals.
    pub fn new(radius: f64, delta: f64, center: Vec<f64>, grad: Vec<Vec<f64>>, value: Vec<Vec<f64>>) -> Result<Self> {
        let shells = grad.first().map_or(0, Vec::len);
        let inner = (1.0 - delta) * radius;
        let edges = (0..=shells)
            .map(|j| if j == shells { radius } else { inner + delta * radius * j as f64 / shells as f64 })
            .collect();
        let data = AnnulusData {
            radius,
            delta,
            center,
            edges,
            grad_integrals: grad,
            value_integrals: value,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::param("annulus radius must be positive"));
        }
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(Error::param(format!("δ must lie in (0, 1/2], got {}", self.delta)));
        }
        let s = self.edges.len().saturating_sub(1);
        if s == 0 || self.edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("shell edges must be strictly increasing"));
        }
        let inner = (1.0 - self.delta) * self.radius;
        if (self.edges[0] - inner).abs() > 1e-12 * self.radius || self.edges[s] != self.radius {
            return Err(Error::param("shells must partition the annulus"));
        }
        if self.grad_integrals.is_empty() || self.grad_integrals.len() != self.value_integrals.len() {
            return Err(Error::param("need gradient and value integrals for at least one field"));
        }
        for row in self.grad_integrals.iter().chain(&self.value_integrals) {
            if row.len() != s || row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::param("shell integrals must be finite, nonnegative, one per shell"));
            }
        }
        Ok(())
    }

    /// Bins element-barycenter quadrature of `|∇u_i|^p` and `|u_i|^p` into
    /// `shells` equal-width shells.
    pub fn from_fields(
        mesh: &Mesh,
        fields: &[DiscreteField],
        center: &[f64],
        radius: f64,
        delta: f64,
        p: f64,
        shells: usize,
    ) -> Result<Self> {
        if shells == 0 || fields.is_empty() {
            return Err(Error::param("need at least one shell and one field"));
        }
        let mut grad = vec![vec![0.0; shells]; fields.len()];
        let mut value = vec![vec![0.0; shells]; fields.len()];
        let inner = (1.0 - delta) * radius;
        let vol = mesh.element_volume();
        let grads: Vec<_> = fields.iter().map(|u| u.gradients(mesh)).collect();
        for e in 0..mesh.n_elements() {
            let b = mesh.barycenter(e);
            let r = distance(&b, center);
            if r <= inner || r >= radius {
                continue;
            }
            let j = (((r - inner) / (delta * radius)) * shells as f64).floor().min(shells as f64 - 1.0) as usize;
            for (i, u) in fields.iter().enumerate() {
                grad[i][j] += vol * grads[i][e].norm().powf(p);
                let v = mesh.interpolate(u, &b);
                value[i][j] += vol * v.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p);
            }
        }
        AnnulusData::new(radius, delta, center.to_vec(), grad, value)
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodRadii {
    /// Per shell: inside `U`.
    pub good: Vec<bool>,
    pub measure: f64,
    pub annulus_width: f64,
}

pub fn good_radii(data: &AnnulusData, p: f64) -> Result<GoodRadii> {
    data.validate()?;
    let d = data.center.len() as f64;
    if !(p > d - 1.0 && p >= 1.0) {
        return Err(Error::param(format!("need p > d − 1 = {}, got {p}", d - 1.0)));
    }
    let c = 4.0 * data.n_fields() as f64;
    let dr = data.delta * data.radius;
    let s = data.n_shells();
    let mut good = vec![true; s];
    for row in data.grad_integrals.iter().chain(&data.value_integrals) {
        let total: f64 = row.iter().sum();
        let threshold = c * total / dr;
        for j in 0..s {
            if row[j] / data.width(j) > threshold {
                good[j] = false;
            }
        }
    }
    let measure: f64 = (0..s).filter(|&j| good[j]).map(|j| data.width(j)).sum();
    let annulus_width: f64 = (0..s).map(|j| data.width(j)).sum();
    if measure < 0.5 * annulus_width {
        return Err(Error::Numerical {
            message: format!("good radii measure {measure} below half the annulus width {annulus_width}"),
            iterate: Vec::new(),
        });
    }
    Ok(GoodRadii {
        good,
        measure,
        annulus_width,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialCutoff {
    pub radius: f64,
    pub delta: f64,
    /// Maximal intervals of `U`, ascending.
    pub intervals: Vec<(f64, f64)>,
    pub measure: f64,
}

pub fn build_cutoff(edges: &[f64], u: &GoodRadii, radius: f64, delta: f64) -> Result<RadialCutoff> {
    if edges.len() != u.good.len() + 1 {
        return Err(Error::param("shell edges do not match the good-radii set"));
    }
    if u.measure < 0.5 * delta * radius * (1.0 - 1e-12) {
        return Err(Error::param(format!(
            "good set of measure {} is below δR/2 = {}",
            u.measure,
            0.5 * delta * radius
        )));
    }
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    for (j, &g) in u.good.iter().enumerate() {
        if !g {
            continue;
        }
        match intervals.last_mut() {
            Some(last) if last.1 == edges[j] => last.1 = edges[j + 1],
            _ => intervals.push((edges[j], edges[j + 1])),
        }
    }
    Ok(RadialCutoff {
        radius,
        delta,
        intervals,
        measure: u.measure,
    })
}

impl RadialCutoff {
    /// `η̃(r) = |U ∩ [r, R]| / |U|` beyond the plateau.
    pub fn eval(&self, r: f64) -> f64 {
        if r <= (1.0 - self.delta) * self.radius {
            return 1.0;
        }
        if r >= self.radius {
            return 0.0;
        }
        let above: f64 = self.intervals.iter().map(|&(a, b)| (b - a.max(r)).max(0.0)).sum();
        (above / self.measure).clamp(0.0, 1.0)
    }

    /// `|η̃'(r)|`: `1/|U|` on `U`, zero elsewhere.
    pub fn slope(&self, r: f64) -> f64 {
        if self.intervals.iter().any(|&(a, b)| r > a && r < b) {
            1.0 / self.measure
        } else {
            0.0
        }
    }

    pub fn lipschitz(&self) -> f64 {
        if self.intervals.is_empty() {
            0.0
        } else {
            1.0 / self.measure
        }
    }

    /// Checks range, plateau, boundary value and Lipschitz bound on a grid of
    /// `samples` radii; returns the number of violations.
    pub fn check_invariants(&self, samples: usize) -> usize {
        let mut bad = 0;
        let inner = (1.0 - self.delta) * self.radius;
        for k in 0..=samples {
            let r = 1.1 * self.radius * k as f64 / samples as f64;
            let v = self.eval(r);
            if !(0.0..=1.0).contains(&v) {
                bad += 1;
            }
            if r <= inner && v != 1.0 {
                bad += 1;
            }
            if r >= self.radius && v != 0.0 {
                bad += 1;
            }
        }
        if self.lipschitz() > 2.0 / (self.delta * self.radius) * (1.0 + 1e-12) {
            bad += 1;
        }
        bad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductBound {
    /// `max |∇η ⊗ u_i|` per field.
    pub lhs: Vec<f64>,
    /// `∫|∇u_i|^p / (δR^d)` per field.
    pub grad_terms: Vec<f64>,
    /// `∫|u_i|^p / (δR^d)` per field.
    pub value_terms: Vec<f64>,
    pub rho: f64,
    /// Smallest `C` with `lhs ≤ ρ/δ·G^{1/p} + C/(δR)·V^{1/p}` for every field.
    pub constant: f64,
}

/// Measures `‖∇η ⊗ u_i‖_∞` at element barycenters against
/// `ρ/δ · G_i^{1/p} + C/(δR) · V_i^{1/p}` and reports the smallest `C`.
pub fn verify_product_bound(
    cutoff: &RadialCutoff,
    mesh: &Mesh,
    fields: &[DiscreteField],
    data: &AnnulusData,
    p: f64,
    rho: f64,
) -> ProductBound {
    let d = data.center.len() as i32;
    let norm = cutoff.delta * cutoff.radius.powi(d);
    let mut lhs = vec![0.0; fields.len()];
    for e in 0..mesh.n_elements() {
        let b = mesh.barycenter(e);
        let slope = cutoff.slope(distance(&b, &data.center));
        if slope == 0.0 {
            continue;
        }
        for (i, u) in fields.iter().enumerate() {
            let v = mesh.interpolate(u, &b);
            let mag = slope * v.iter().map(|x| x * x).sum::<f64>().sqrt();
            lhs[i] = f64::max(lhs[i], mag);
        }
    }
    let grad_terms: Vec<f64> = data.grad_integrals.iter().map(|r| r.iter().sum::<f64>() / norm).collect();
    let value_terms: Vec<f64> = data.value_integrals.iter().map(|r| r.iter().sum::<f64>() / norm).collect();
    let mut constant: f64 = 0.0;
    for i in 0..fields.len() {
        let rest = lhs[i] - rho / cutoff.delta * grad_terms[i].powf(1.0 / p);
        if rest > 0.0 {
            let v = value_terms[i].powf(1.0 / p);
            constant = constant.max(if v > 0.0 {
                rest * cutoff.delta * cutoff.radius / v
            } else {
                f64::INFINITY
            });
        }
    }
    ProductBound {
        lhs,
        grad_terms,
        value_terms,
        rho,
        constant,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    pub delta: f64,
    pub radius: f64,
    pub n_fields: usize,
    pub p: f64,
    pub good_measure: f64,
    pub invariant_violations: usize,
    pub constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: Vec<TrialReport>,
    /// Trials with `|U| < δR/2`; must be zero.
    pub measure_violations: usize,
    pub invariant_violations: usize,
    pub max_constant: f64,
}

fn uniform(seed: u64, key: &[i64]) -> f64 {
    (hash_seed(seed, key) >> 11) as f64 / (1u64 << 53) as f64
}

/// Random P1 fields on `[−1, 1]^2` with occasional localized spikes, cycled
/// over `p ∈ {1.5, 2, 3}` and `δ ∈ {0.1, 0.25, 0.5}`.
pub fn random_trials(n_trials: usize, seed: u64, rho: f64) -> Result<TrialSummary> {
    use crate::discretize::{build_mesh, BoxDomain};
    let mesh = build_mesh(&BoxDomain::cube(1.0, 2), 16)?;
    let ps = [1.5, 2.0, 3.0];
    let deltas = [0.1, 0.25, 0.5];
    let radius: f64 = 1.0;
    let mut trials = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let p = ps[t % 3];
        let delta = deltas[(t / 3) % 3];
        let n_fields = 1 + (hash_seed(seed, &[t as i64, -1]) % 3) as usize;
        let fields: Vec<DiscreteField> = (0..n_fields)
            .map(|i| {
                let spike_r = 0.5 + 0.5 * uniform(seed, &[t as i64, i as i64, -2]);
                let amp = 10.0 * uniform(seed, &[t as i64, i as i64, -3]);
                let mut u = DiscreteField::zeros(&mesh, 1);
                for node in 0..mesh.n_nodes() {
                    let x = mesh.node_coords(node);
                    let noise = 2.0 * uniform(seed, &[t as i64, i as i64, node as i64]) - 1.0;
                    let r = distance(&x, &[0.0, 0.0]);
                    u.values[node] = noise + amp * (-((r - spike_r) / 0.05).powi(2)).exp();
                }
                u
            })
            .collect();
        let shells = ((delta * radius) * 16.0).round().max(1.0) as usize;
        let data = AnnulusData::from_fields(&mesh, &fields, &[0.0, 0.0], radius, delta, p, shells)?;
        let u = good_radii(&data, p)?;
        let cut = build_cutoff(&data.edges, &u, radius, delta)?;
        let bound = verify_product_bound(&cut, &mesh, &fields, &data, p, rho);
        trials.push(TrialReport {
            trial: t,
            delta,
            radius,
            n_fields,
            p,
            good_measure: u.measure,
            invariant_violations: cut.check_invariants(200),
            constant: bound.constant,
        });
    }
    Ok(TrialSummary {
        measure_violations: trials
            .iter()
            .filter(|t| t.good_measure < 0.5 * t.delta * t.radius * (1.0 - 1e-12))
            .count(),
        invariant_violations: trials.iter().map(|t| t.invariant_violations).sum(),
        max_constant: trials.iter().map(|t| t.constant).fold(0.0, f64::max),
        trials,
    })
}
