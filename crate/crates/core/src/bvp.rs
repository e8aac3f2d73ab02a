//! Boundary value problems at scale `ε` and their homogenized limits.
//!
//! The `ε`-problem minimizes `Σ_e vol_e W(s(x_e/ε), ∇u) − Σ_i w_i f_ε(x_i)·u_i`
//! over P1 functions equal to an affine datum `g` on `∂D`. The homogenized
//! problem replaces `W` by a tabulated `W_hom`.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{
    assemble_energy, assemble_energy_gradient, build_mesh, Boundary, BoxDomain, DiscreteField, EnergyProblem, Mesh,
};
use crate::error::{Error, Result};
use crate::integrand::{Integrand, IntegrandSpec, MaterialState};
use crate::matrix::{pairwise_sum, sup_norm, Mat};
use crate::random_field::{realize_window, FieldSpec, Window};
use crate::solver::{continuation_minimize, SolveOptions, Solution};

const CONJUGATE_RADIUS: f64 = 1e8;

/// `W_hom` sampled on a tensor grid over the entries of `ξ`.
///
/// Tables over a single entry are interpolated by C¹ cubic Hermite splines
/// with three-point nodal slopes (exact on quadratics); larger tables use
/// multilinear interpolation. Both extend linearly beyond the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhomTable {
    pub rows: usize,
    pub cols: usize,
    /// One strictly increasing axis per entry of `ξ` (row-major).
    pub axes: Vec<Vec<f64>>,
    /// Values on the grid, last axis fastest.
    pub values: Vec<f64>,
}

impl WhomTable {
    pub fn new(rows: usize, cols: usize, axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        let table = WhomTable {
            rows,
            cols,
            axes,
            values,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.len() != self.rows * self.cols || self.axes.is_empty() {
            return Err(Error::param("table needs one axis per entry of ξ"));
        }
        for a in &self.axes {
            if a.len() < 2 || a.windows(2).any(|w| !(w[1] > w[0])) || a.iter().any(|v| !v.is_finite()) {
                return Err(Error::param("table axes need ≥ 2 strictly increasing finite points"));
            }
        }
        let n: usize = self.axes.iter().map(Vec::len).product();
        if self.values.len() != n || self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(format!("table needs {n} finite values, got {}", self.values.len())));
        }
        Ok(())
    }

    /// Grid points in value order.
    pub fn grid(&self) -> Vec<Mat> {
        let n: usize = self.axes.iter().map(Vec::len).product();
        (0..n)
            .map(|mut lin| {
                let mut data = vec![0.0; self.axes.len()];
                for k in (0..self.axes.len()).rev() {
                    let len = self.axes[k].len();
                    data[k] = self.axes[k][lin % len];
                    lin /= len;
                }
                Mat::from_vec(self.rows, self.cols, data).expect("shape")
            })
            .collect()
    }

    pub fn from_fn(rows: usize, cols: usize, axes: Vec<Vec<f64>>, f: impl Fn(&Mat) -> Result<f64>) -> Result<Self> {
        let proto = WhomTable {
            rows,
            cols,
            values: Vec::new(),
            axes,
        };
        if proto.axes.len() != rows * cols {
            return Err(Error::param("table needs one axis per entry of ξ"));
        }
        let values = proto.grid().iter().map(&f).collect::<Result<Vec<_>>>()?;
        WhomTable::new(rows, cols, proto.axes, values)
    }

    /// True when every entry of `xi` lies within its axis range.
    pub fn covers(&self, xi: &[f64]) -> bool {
        xi.iter()
            .zip(&self.axes)
            .all(|(v, a)| *v >= a[0] - 1e-12 && *v <= a[a.len() - 1] + 1e-12)
    }

    /// Value and gradient of the interpolant.
    pub fn eval(&self, xi: &[f64], grad: &mut [f64]) -> f64 {
        if self.axes.len() == 1 {
            let (v, g) = hermite(&self.axes[0], &self.values, xi[0]);
            grad[0] = g;
            return v;
        }
        self.multilinear(xi, grad)
    }

    fn multilinear(&self, xi: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.axes.len();
        let mut base = vec![0usize; k];
        let mut t = vec![0.0; k];
        let mut inv_h = vec![0.0; k];
        for j in 0..k {
            let a = &self.axes[j];
            let i = a.partition_point(|&x| x <= xi[j]).clamp(1, a.len() - 1) - 1;
            base[j] = i;
            inv_h[j] = 1.0 / (a[i + 1] - a[i]);
            t[j] = (xi[j] - a[i]) * inv_h[j];
        }
        let mut strides = vec![1usize; k];
        for j in (0..k - 1).rev() {
            strides[j] = strides[j + 1] * self.axes[j + 1].len();
        }
        grad.fill(0.0);
        let mut value = 0.0;
        for corner in 0..(1usize << k) {
            let mut idx = 0;
            let mut w = 1.0;
            for j in 0..k {
                let bit = corner >> j & 1;
                idx += (base[j] + bit) * strides[j];
                w *= if bit == 1 { t[j] } else { 1.0 - t[j] };
            }
            let v = self.values[idx];
            value += w * v;
            for j in 0..k {
                let bit = corner >> j & 1;
                let mut dw = if bit == 1 { inv_h[j] } else { -inv_h[j] };
                for l in 0..k {
                    if l != j {
                        let b = corner >> l & 1;
                        dw *= if b == 1 { t[l] } else { 1.0 - t[l] };
                    }
                }
                grad[j] += dw * v;
            }
        }
        value
    }
}

fn hermite_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let sec: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    if n == 2 {
        return vec![sec[0]; 2];
    }
    let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        m[i] = (sec[i - 1] * h[i] + sec[i] * h[i - 1]) / (h[i - 1] + h[i]);
    }
    m[0] = (sec[0] * (2.0 * h[0] + h[1]) - sec[1] * h[0]) / (h[0] + h[1]);
    let (a, b) = (h[n - 2], h[n - 3]);
    m[n - 1] = (sec[n - 2] * (2.0 * a + b) - sec[n - 3] * a) / (a + b);
    m
}

fn hermite(x: &[f64], y: &[f64], at: f64) -> (f64, f64) {
    hermite_with(x, y, &hermite_slopes(x, y), at)
}

fn hermite_with(x: &[f64], y: &[f64], m: &[f64], at: f64) -> (f64, f64) {
    let n = x.len();
    if at <= x[0] {
        return (y[0] + m[0] * (at - x[0]), m[0]);
    }
    if at >= x[n - 1] {
        return (y[n - 1] + m[n - 1] * (at - x[n - 1]), m[n - 1]);
    }
    let i = x.partition_point(|&v| v <= at) - 1;
    let h = x[i + 1] - x[i];
    let t = (at - x[i]) / h;
    let (t2, t3) = (t * t, t * t * t);
    let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y[i]
        + (t3 - 2.0 * t2 + t) * h * m[i]
        + (-2.0 * t3 + 3.0 * t2) * y[i + 1]
        + (t3 - t2) * h * m[i + 1];
    let d = ((6.0 * t2 - 6.0 * t) * y[i] + (-6.0 * t2 + 6.0 * t) * y[i + 1]) / h
        + (3.0 * t2 - 4.0 * t + 1.0) * m[i]
        + (3.0 * t2 - 2.0 * t) * m[i + 1];
    (v, d)
}

/// A tabulated `W_hom` seen as a state-independent integrand.
#[derive(Clone, Debug)]
pub struct TabulatedIntegrand {
    table: Arc<WhomTable>,
    slopes: Vec<f64>,
}

impl TabulatedIntegrand {
    pub fn new(table: WhomTable) -> Result<Self> {
        table.validate()?;
        let slopes = if table.axes.len() == 1 {
            hermite_slopes(&table.axes[0], &table.values)
        } else {
            Vec::new()
        };
        Ok(TabulatedIntegrand {
            table: Arc::new(table),
            slopes,
        })
    }

    pub fn table(&self) -> &WhomTable {
        &self.table
    }
}

impl Integrand for TabulatedIntegrand {
    fn value(&self, state: &MaterialState, xi: &[f64]) -> f64 {
        let mut g = [0.0; 64];
        self.value_and_gradient(state, xi, &mut g[..xi.len()])
    }

    fn value_and_gradient(&self, _state: &MaterialState, xi: &[f64], grad: &mut [f64]) -> f64 {
        if self.slopes.is_empty() {
            return self.table.multilinear(xi, grad);
        }
        let (v, g) = hermite_with(&self.table.axes[0], &self.table.values, &self.slopes, xi[0]);
        grad[0] = g;
        v
    }

    fn is_differentiable(&self) -> bool {
        self.table.axes.len() == 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineDatum {
    /// `m` rows of length `d`.
    pub xi: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
}

impl AffineDatum {
    pub fn zero(m: usize, d: usize) -> Self {
        AffineDatum {
            xi: vec![vec![0.0; d]; m],
            b: vec![0.0; m],
        }
    }

    pub fn matrix(&self) -> Result<Mat> {
        let rows = self.xi.len();
        let cols = self.xi.first().map_or(0, Vec::len);
        Mat::from_vec(rows, cols, self.xi.iter().flatten().copied().collect())
    }

    fn offset(&self) -> Vec<f64> {
        if self.b.is_empty() {
            vec![0.0; self.xi.len()]
        } else {
            self.b.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceSpec {
    Zero,
    Constant { value: Vec<f64> },
    /// `f_ε(x) = value + amplitude · sin(2π x₁/ε)`, weakly converging to `value`.
    Oscillating { value: Vec<f64>, amplitude: f64 },
}

impl Default for ForceSpec {
    fn default() -> Self {
        ForceSpec::Zero
    }
}

impl ForceSpec {
    fn at(&self, x: &[f64], eps: Option<f64>, m: usize) -> Vec<f64> {
        match self {
            ForceSpec::Zero => vec![0.0; m],
            ForceSpec::Constant { value } => value.clone(),
            ForceSpec::Oscillating { value, amplitude } => {
                let osc = eps.map_or(0.0, |e| amplitude * (2.0 * std::f64::consts::PI * x[0] / e).sin());
                value.iter().map(|v| v + osc).collect()
            }
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, ForceSpec::Zero)
    }

    fn check(&self, m: usize) -> Result<()> {
        match self {
            ForceSpec::Zero => Ok(()),
            ForceSpec::Constant { value } | ForceSpec::Oscillating { value, .. } if value.len() == m => Ok(()),
            _ => Err(Error::param(format!("force needs {m} components"))),
        }
    }

    /// Nodal values at scale `eps`; `None` gives the weak limit.
    pub fn nodal(&self, mesh: &Mesh, eps: Option<f64>, m: usize) -> Vec<f64> {
        (0..mesh.n_nodes()).flat_map(|i| self.at(&mesh.node_coords(i), eps, m)).collect()
    }
}

/// `1/q < 1 − 1/p + 1/d`, the exponent condition under coercivity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentCondition {
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpConfig {
    pub domain: BoxDomain,
    pub g: AffineDatum,
    #[serde(default)]
    pub force: ForceSpec,
    pub eps_list: Vec<f64>,
    /// Mesh intervals per field cell edge.
    #[serde(default = "default_nodes_per_cell")]
    pub nodes_per_cell: usize,
    pub integrand: IntegrandSpec,
    pub field: FieldSpec,
    #[serde(default)]
    pub solver: SolveOptions,
    /// Enables minimizer comparisons in convergence studies.
    #[serde(default)]
    pub strict_convexity: bool,
    /// Relative energy gap required at the smallest `ε`.
    #[serde(default)]
    pub gap_threshold: Option<f64>,
    #[serde(default)]
    pub exponents: Option<ExponentCondition>,
}

fn default_nodes_per_cell() -> usize {
    4
}

fn near_integer(v: f64) -> Option<i64> {
    let r = v.round();
    ((v - r).abs() <= 1e-9 * r.abs().max(1.0)).then_some(r as i64)
}

impl BvpConfig {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn m(&self) -> usize {
        self.integrand.rows
    }

    pub fn validate(&self) -> Result<()> {
        self.integrand.validate()?;
        self.field.validate()?;
        self.solver.validate()?;
        let d = self.dim();
        if self.field.dim != d || self.integrand.cols != d || self.domain.upper.len() != d {
            return Err(Error::param("domain, field and integrand dimensions disagree"));
        }
        let g = self.g.matrix()?;
        if g.rows() != self.m() || g.cols() != d || self.g.xi.iter().any(|r| r.len() != d) {
            return Err(Error::param(format!("boundary datum must be {}x{d}", self.m())));
        }
        if !self.g.b.is_empty() && self.g.b.len() != self.m() {
            return Err(Error::param("boundary offset needs m components"));
        }
        self.force.check(self.m())?;
        if self.eps_list.is_empty() {
            return Err(Error::param("eps_list is empty"));
        }
        if self.nodes_per_cell == 0 {
            return Err(Error::param("nodes_per_cell must be positive"));
        }
        for &eps in &self.eps_list {
            self.mesh_resolution(eps)?;
        }
        if let Some(ExponentCondition { p, q }) = self.exponents {
            let dd = d as f64;
            if !(p > dd - 1.0 && p > 1.0) {
                return Err(Error::param(format!("coercivity exponent p = {p} must exceed max(1, d − 1)")));
            }
            if !(1.0 / q < 1.0 - 1.0 / p + 1.0 / dd) {
                return Err(Error::param(format!("exponents violate 1/q < 1 − 1/p + 1/d (p={p}, q={q})")));
            }
        }
        Ok(())
    }

    /// Mesh nodes per unit length at scale `eps`, checked against the field's
    /// cell grid so that no element straddles a coefficient jump.
    pub fn mesh_resolution(&self, eps: f64) -> Result<usize> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::param(format!("ε must be positive, got {eps}")));
        }
        let cpu = self.field.cells_per_unit as f64;
        let n = near_integer(self.nodes_per_cell as f64 * cpu / eps)
            .ok_or_else(|| Error::param(format!("ε = {eps} does not divide the mesh: {} nodes per cell", self.nodes_per_cell)))?;
        for (l, u) in self.domain.lower.iter().zip(&self.domain.upper) {
            if near_integer(l * cpu / eps).is_none() || near_integer(u * cpu / eps).is_none() {
                return Err(Error::param(format!("domain side [{l}, {u}] is not aligned with the ε = {eps} cell grid")));
            }
        }
        Ok(n as usize)
    }

    fn boundary_field(&self, mesh: &Mesh) -> Result<DiscreteField> {
        Ok(DiscreteField::affine(mesh, &self.g.matrix()?, &self.g.offset()).constrain_boundary(mesh))
    }
}

/// The homogenized integrand: a table, or the original integrand at a fixed
/// state when the coefficients are constant.
#[derive(Clone, Debug)]
pub enum HomModel {
    Table(WhomTable),
    Exact(MaterialState),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoercivityCheck {
    pub total: f64,
    pub half_bulk: f64,
    /// `½ Σ vol W*(s, 2Φ)` with `Φ` the discrete flux of the force.
    pub a_omega: f64,
    /// Boundary-datum term `|Σ w f·g| + |Σ vol Φ·∇g|`.
    pub c_g: f64,
    pub holds: bool,
}

#[derive(Clone, Debug)]
pub struct BvpSolution {
    pub mesh: Arc<Mesh>,
    pub u: DiscreteField,
    pub total_energy: f64,
    pub bulk_energy: f64,
    pub residual: f64,
    /// `‖u‖` in `L^{d/(d−1)}` (`L^∞` when `d = 1`).
    pub l_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Energy of the boundary datum itself; never below `total_energy`.
    pub datum_energy: f64,
    pub coercivity: Option<CoercivityCheck>,
}

/// `sup` over free nodal test functions of the discrete Euler–Lagrange
/// residual, i.e. the free-gradient sup-norm.
pub fn el_residual(problem: &EnergyProblem, u: &DiscreteField) -> Result<f64> {
    Ok(sup_norm(&assemble_energy_gradient(problem, u)?))
}

fn finish(problem: &EnergyProblem, start: &DiscreteField, sol: Solution, spec: Option<&IntegrandSpec>) -> Result<BvpSolution> {
    let bulk = assemble_energy(&problem.without_force(), &sol.u)?;
    let residual = el_residual(problem, &sol.u)?;
    let datum_energy = assemble_energy(problem, start)?;
    let zero = DiscreteField::zeros(&problem.mesh, sol.u.m);
    let l_norm = ldstar_distance(&problem.mesh, &sol.u, &problem.mesh, &zero)?;
    let coercivity = match spec {
        Some(spec) if problem.mesh.dim() == 1 => Some(coercivity_1d(problem, spec, &sol.u, start, sol.energy, bulk)?),
        _ => None,
    };
    Ok(BvpSolution {
        mesh: problem.mesh.clone(),
        total_energy: sol.energy,
        bulk_energy: bulk,
        residual,
        l_norm,
        iterations: sol.iterations,
        converged: sol.converged,
        datum_energy,
        coercivity,
        u: sol.u,
    })
}

/// Discrete summation by parts: with `v = u − g` vanishing at both ends,
/// `Σ w f v = Σ_e vol Φ_e v'_e`, `Φ_e` the tail sum of `w f` right of `e`.
/// Fenchel–Young on `Φ u' = ½ (2Φ) u'` then bounds the force pairing.
fn coercivity_1d(
    problem: &EnergyProblem,
    spec: &IntegrandSpec,
    u: &DiscreteField,
    g: &DiscreteField,
    total: f64,
    bulk: f64,
) -> Result<CoercivityCheck> {
    let mesh = &problem.mesh;
    let m = u.m;
    let n_nodes = mesh.n_nodes();
    let weights = mesh.lumped_weights();
    let f = problem.force.clone().unwrap_or_else(|| Arc::new(vec![0.0; n_nodes * m]));
    // nodes are ordered left to right in 1D; element e joins e and e + 1
    let mut tail = vec![vec![0.0; m]; n_nodes + 1];
    for i in (0..n_nodes).rev() {
        for c in 0..m {
            tail[i][c] = tail[i + 1][c] + weights[i] * f[i * m + c];
        }
    }
    let vol = mesh.element_volume();
    let g_grad = g.gradients(mesh);
    let mut a_terms = Vec::with_capacity(mesh.n_elements());
    let mut phi_g = Vec::with_capacity(mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let (verts, _) = mesh.element(e);
        let phi: Vec<f64> = tail[verts[1]].clone();
        let slope = 2.0 * phi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let w_star = match spec.radial_conjugate(&problem.states[e], slope, CONJUGATE_RADIUS) {
            Ok(v) => v,
            Err(Error::RadiusTooSmall { .. }) => f64::INFINITY,
            Err(err) => return Err(err),
        };
        a_terms.push(0.5 * vol * w_star);
        phi_g.push(vol * phi.iter().zip(g_grad[e].as_slice()).map(|(p, q)| p * q).sum::<f64>());
    }
    let fg: Vec<f64> = (0..n_nodes)
        .map(|i| weights[i] * (0..m).map(|c| f[i * m + c] * g.values[i * m + c]).sum::<f64>())
        .collect();
    let a_omega = pairwise_sum(&a_terms);
    let c_g = pairwise_sum(&fg).abs() + pairwise_sum(&phi_g).abs();
    let bound = 0.5 * bulk - a_omega - c_g;
    let slack = 1e-9 * (1.0 + total.abs() + bulk.abs());
    Ok(CoercivityCheck {
        total,
        half_bulk: 0.5 * bulk,
        a_omega,
        c_g,
        holds: total >= bound - slack,
    })
}

pub fn solve_eps_problem(cfg: &BvpConfig, eps: f64, seed: u64) -> Result<BvpSolution> {
    cfg.validate()?;
    let n = cfg.mesh_resolution(eps)?;
    let mesh = Arc::new(build_mesh(&cfg.domain, n)?);
    let window = Window {
        lower: cfg.domain.lower.iter().map(|l| (l / eps).floor() as i64).collect(),
        upper: cfg.domain.upper.iter().map(|u| (u / eps).ceil() as i64).collect(),
    };
    let real = realize_window(&cfg.field, &window, seed)?;
    let w: Arc<dyn Integrand> = Arc::new(cfg.integrand.clone());
    let mut problem = EnergyProblem::new(mesh.clone(), &real, eps, w, Mat::zeros(cfg.m(), cfg.dim()), Boundary::Dirichlet)?;
    if !cfg.force.is_zero() {
        problem = problem.with_force(cfg.force.nodal(&mesh, Some(eps), cfg.m()))?;
    }
    let start = cfg.boundary_field(&mesh)?;
    let sol = continuation_minimize(&problem, &start, &cfg.solver)?;
    finish(&problem, &start, sol, Some(&cfg.integrand))
}

/// Solves the homogenized problem with the weak-limit force on a mesh with
/// `n_per_unit` nodes per unit length.
pub fn solve_homogenized(cfg: &BvpConfig, model: &HomModel, n_per_unit: usize) -> Result<BvpSolution> {
    cfg.validate()?;
    let mesh = Arc::new(build_mesh(&cfg.domain, n_per_unit)?);
    let (w, state, spec): (Arc<dyn Integrand>, MaterialState, Option<&IntegrandSpec>) = match model {
        HomModel::Table(t) => {
            if (t.rows, t.cols) != (cfg.m(), cfg.dim()) {
                return Err(Error::param("table shape does not match the problem"));
            }
            (Arc::new(TabulatedIntegrand::new(t.clone())?), MaterialState::default(), None)
        }
        HomModel::Exact(s) => (Arc::new(cfg.integrand.clone()), *s, Some(&cfg.integrand)),
    };
    let mut problem = EnergyProblem::uniform(mesh.clone(), state, w, Mat::zeros(cfg.m(), cfg.dim()), Boundary::Dirichlet)?;
    if !cfg.force.is_zero() {
        problem = problem.with_force(cfg.force.nodal(&mesh, None, cfg.m()))?;
    }
    let start = cfg.boundary_field(&mesh)?;
    let sol = continuation_minimize(&problem, &start, &cfg.solver)?;
    if let HomModel::Table(t) = model {
        for g in sol.u.gradients(&mesh) {
            if !t.covers(g.as_slice()) {
                return Err(Error::TableCoverage(format!(
                    "gradient {:?} leaves the tabulated range; re-tabulate on a wider grid",
                    g.as_slice()
                )));
            }
        }
    }
    finish(&problem, &start, sol, spec)
}

/// Clamps every component to `[−s, s]` node by node.
pub fn componentwise_truncate(u: &DiscreteField, s: f64) -> Result<DiscreteField> {
    if !(s > 0.0) {
        return Err(Error::param("truncation level must be positive"));
    }
    let mut out = u.clone();
    out.values.iter_mut().for_each(|v| *v = v.clamp(-s, s));
    Ok(out)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `‖u_a − u_b‖` in `L^{d/(d−1)}` on the common refinement of two meshes of
/// the same box (`L^∞` over nodes when `d = 1`).
pub fn ldstar_distance(mesh_a: &Mesh, u_a: &DiscreteField, mesh_b: &Mesh, u_b: &DiscreteField) -> Result<f64> {
    if mesh_a.domain() != mesh_b.domain() || u_a.m != u_b.m {
        return Err(Error::param("distance needs fields on the same box"));
    }
    let (na, nb) = (mesh_a.n_per_unit(), mesh_b.n_per_unit());
    let n = na / gcd(na, nb) * nb;
    let common = if n == na {
        mesh_a.clone()
    } else if n == nb {
        mesh_b.clone()
    } else {
        build_mesh(mesh_a.domain(), n)?
    };
    let d = common.dim();
    let diff = |x: &[f64]| -> f64 {
        let a = mesh_a.interpolate(u_a, x);
        let b = mesh_b.interpolate(u_b, x);
        a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
    };
    if d == 1 {
        return Ok((0..common.n_nodes())
            .map(|i| diff(&common.node_coords(i)))
            .fold(0.0, f64::max));
    }
    let r = d as f64 / (d as f64 - 1.0);
    let terms: Vec<f64> = (0..common.n_elements())
        .into_par_iter()
        .map(|e| common.element_volume() * diff(&common.barycenter(e)).powf(r))
        .collect();
    Ok(pairwise_sum(&terms).powf(1.0 / r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub eps: f64,
    pub seed: u64,
    pub energy_eps: f64,
    pub energy_hom: f64,
    pub gap: f64,
    /// Reported only under strict convexity.
    pub l_dstar_distance: Option<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<StudyRow>,
    /// Seed-averaged gap per `ε`, in the order of `eps_list`.
    pub mean_gaps: Vec<(f64, f64)>,
    /// Largest `gap / |E_hom|` at the smallest `ε`.
    pub final_relative_gap: f64,
    pub gap_decreasing: bool,
    /// Threshold verdict when `gap_threshold` is configured.
    pub passed: Option<bool>,
}

impl ConvergenceStudy {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "eps,seed,energy_eps,energy_hom,gap,l_dstar_distance,residual,iterations")?;
        for r in &self.rows {
            let dist = r.l_dstar_distance.map_or("nan".to_string(), |v| format!("{v:.17e}"));
            writeln!(
                out,
                "{:.17e},{},{:.17e},{:.17e},{:.17e},{},{:.17e},{}",
                r.eps, r.seed, r.energy_eps, r.energy_hom, r.gap, dist, r.residual, r.iterations
            )?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// For each `(ε, seed)`: the `ε`-minimum, the homogenized minimum on the same
/// mesh, their gap and (under strict convexity) the minimizer distance.
pub fn convergence_study(cfg: &BvpConfig, model: &HomModel, seeds: &[u64]) -> Result<ConvergenceStudy> {
    cfg.validate()?;
    if cfg.eps_list.len() < 3 {
        return Err(Error::param("a convergence study needs at least three ε values"));
    }
    if seeds.is_empty() {
        return Err(Error::param("at least one seed is required"));
    }
    let resolutions: Vec<usize> = cfg.eps_list.iter().map(|&e| cfg.mesh_resolution(e)).collect::<Result<_>>()?;
    let mut distinct = resolutions.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let homs: Vec<(usize, BvpSolution)> = distinct
        .par_iter()
        .map(|&n| Ok((n, solve_homogenized(cfg, model, n)?)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..cfg.eps_list.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let rows: Vec<StudyRow> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let eps = cfg.eps_list[i];
            let sol = solve_eps_problem(cfg, eps, seed)?;
            let hom = &homs.iter().find(|(n, _)| *n == resolutions[i]).expect("solved").1;
            let l_dstar_distance = if cfg.strict_convexity {
                Some(ldstar_distance(&sol.mesh, &sol.u, &hom.mesh, &hom.u)?)
            } else {
                None
            };
            Ok(StudyRow {
                eps,
                seed,
                energy_eps: sol.total_energy,
                energy_hom: hom.total_energy,
                gap: (sol.total_energy - hom.total_energy).abs(),
                l_dstar_distance,
                residual: sol.residual,
                iterations: sol.iterations,
                converged: sol.converged,
            })
        })
        .collect::<Result<_>>()?;

    let mean_gaps: Vec<(f64, f64)> = cfg
        .eps_list
        .iter()
        .map(|&eps| {
            let g: Vec<f64> = rows.iter().filter(|r| r.eps == eps).map(|r| r.gap).collect();
            (eps, g.iter().sum::<f64>() / g.len() as f64)
        })
        .collect();
    let mut by_eps = mean_gaps.clone();
    by_eps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let gap_decreasing = by_eps.windows(2).all(|w| w[1].1 < w[0].1 || w[0].1 == 0.0 && w[1].1 == 0.0);
    let smallest = by_eps.last().expect("nonempty").0;
    let final_relative_gap = rows
        .iter()
        .filter(|r| r.eps == smallest)
        .map(|r| r.gap / r.energy_hom.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let passed = cfg.gap_threshold.map(|t| final_relative_gap <= t);
    Ok(ConvergenceStudy {
        rows,
        mean_gaps,
        final_relative_gap,
        gap_decreasing,
        passed,
    })
}
