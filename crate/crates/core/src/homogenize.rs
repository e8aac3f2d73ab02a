//! Multi-cell estimates of `W_hom(ξ)`, corrector-averaged gradients and the
//! structural checks (convexity, growth, subadditivity) they must satisfy.
//!
//! A cell problem minimizes `Σ_e vol_e W(s_e, ξ + ∇u|_e)` over P1 functions
//! on `(−t, t)^d` that vanish on the boundary (or are periodic), normalized by
//! the window volume.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{build_mesh, Boundary, BoxDomain, DiscreteField, EnergyProblem, Mesh};
use crate::error::{Error, Result};
use crate::integrand::{Integrand, IntegrandSpec};
use crate::legendre;
use crate::matrix::{pairwise_sum, Mat};
use crate::random_field::{realize_window, FieldSpec, Window};
use crate::solver::{continuation_minimize, SolveOptions, Solution};
use crate::stats::{fit_inverse_t, mean_and_stderr, InverseFit};

/// Everything a cell problem needs besides `ξ`, `t` and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub integrand: IntegrandSpec,
    pub field: FieldSpec,
    pub bc: Boundary,
    /// Mesh nodes per unit length; a multiple of the field's cells per unit.
    pub n_per_unit: usize,
    #[serde(default)]
    pub solver: SolveOptions,
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        self.integrand.validate()?;
        self.field.validate()?;
        self.solver.validate()?;
        if self.integrand.cols != self.field.dim {
            return Err(Error::param(format!(
                "integrand acts on {}-dimensional gradients but the field lives in dimension {}",
                self.integrand.cols, self.field.dim
            )));
        }
        if self.n_per_unit == 0 || self.n_per_unit % self.field.cells_per_unit != 0 {
            return Err(Error::param(format!(
                "mesh resolution {} is not a multiple of the field's {} cells per unit",
                self.n_per_unit, self.field.cells_per_unit
            )));
        }
        Ok(())
    }

    fn check_xi(&self, xi: &Mat) -> Result<()> {
        if xi.rows() != self.integrand.rows || xi.cols() != self.integrand.cols {
            return Err(Error::Shape {
                expected: format!("{}x{}", self.integrand.rows, self.integrand.cols),
                got: format!("{}x{}", xi.rows(), xi.cols()),
            });
        }
        Ok(())
    }

    /// The energy of the cell problem posed on an arbitrary integer window.
    pub fn window_problem(&self, xi: &Mat, window: &Window, bc: Boundary, seed: u64) -> Result<EnergyProblem> {
        self.validate()?;
        self.check_xi(xi)?;
        let real = realize_window(&self.field, window, seed)?;
        let domain = BoxDomain::new(
            window.lower.iter().map(|&v| v as f64).collect(),
            window.upper.iter().map(|&v| v as f64).collect(),
        );
        let mesh = Arc::new(build_mesh(&domain, self.n_per_unit)?);
        let w: Arc<dyn Integrand> = Arc::new(self.integrand.clone());
        EnergyProblem::new(mesh, &real, 1.0, w, xi.clone(), bc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellProblem {
    pub xi: Mat,
    /// Half-width of the window `(−t, t)^d`.
    pub t: i64,
    pub seed: u64,
    pub config: CellConfig,
}

impl CellProblem {
    pub fn new(xi: Mat, t: i64, seed: u64, config: CellConfig) -> Result<Self> {
        if t < 1 {
            return Err(Error::param(format!("window half-width must be a positive integer, got {t}")));
        }
        config.validate()?;
        config.check_xi(&xi)?;
        Ok(CellProblem { xi, t, seed, config })
    }

    pub fn window(&self) -> Window {
        Window::centered_cube(self.t, self.config.field.dim)
    }

    pub fn energy_problem(&self) -> Result<EnergyProblem> {
        self.config.window_problem(&self.xi, &self.window(), self.config.bc, self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    /// `μ_ξ / |tQ|`.
    pub value: f64,
    /// Same-quadrature window average of `W(·, ξ)`.
    pub upper: f64,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub corrector: DiscreteField,
    pub wallclock_s: f64,
}

fn zero_start(problem: &EnergyProblem) -> DiscreteField {
    let u = DiscreteField::zeros(&problem.mesh, problem.m());
    match problem.boundary {
        Boundary::Dirichlet => u.constrain_boundary(&problem.mesh),
        Boundary::Periodic => u,
    }
}

fn solve_cell(problem: &EnergyProblem, warm: Option<&DiscreteField>, opts: &SolveOptions) -> Result<(Solution, f64)> {
    let zero = zero_start(problem);
    let upper = problem.affine_energy();
    // a warm start is used only if it already beats the affine competitor
    let start = match warm {
        Some(w) => {
            problem.check_field(w)?;
            let e = crate::discretize::assemble_energy(problem, w)?;
            if e.is_finite() && e < upper {
                w.clone()
            } else {
                zero
            }
        }
        None => zero,
    };
    let sol = continuation_minimize(problem, &start, opts)?;
    Ok((sol, upper))
}

pub fn multicell_estimate(cp: &CellProblem) -> Result<CellResult> {
    multicell_estimate_from(cp, None)
}

/// As [`multicell_estimate`], starting from `warm` when it is admissible and
/// better than the affine function.
pub fn multicell_estimate_from(cp: &CellProblem, warm: Option<&DiscreteField>) -> Result<CellResult> {
    let clock = Instant::now();
    let problem = cp.energy_problem()?;
    let (sol, upper) = solve_cell(&problem, warm, &cp.config.solver)?;
    let vol = cp.window().volume();
    Ok(CellResult {
        value: sol.energy / vol,
        upper: upper / vol,
        energy: sol.energy,
        iterations: sol.iterations,
        converged: sol.converged,
        grad_norm: sol.grad_norm,
        corrector: sol.u,
        wallclock_s: clock.elapsed().as_secs_f64(),
    })
}

/// Zero extension of a Dirichlet corrector from a smaller centered window.
pub fn embed_corrector(small: &Mesh, u: &DiscreteField, large: &Mesh) -> DiscreteField {
    let half = small.domain().upper[0];
    let mut out = DiscreteField::zeros(large, u.m).constrain_boundary(large);
    for node in 0..large.n_nodes() {
        let x = large.node_coords(node);
        if x.iter().all(|v| v.abs() <= half) {
            let v = small.interpolate(u, &x);
            out.values[node * u.m..(node + 1) * u.m].copy_from_slice(&v);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSample {
    pub t: i64,
    pub seed: u64,
    pub value: f64,
    pub upper: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TSummary {
    pub t: i64,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedEstimate {
    pub xi: Vec<f64>,
    pub samples: Vec<CellSample>,
    pub per_t: Vec<TSummary>,
    /// The `1/t`-extrapolated value.
    pub value: f64,
    pub fit: InverseFit,
    pub all_converged: bool,
}

fn check_sweep(t_list: &[i64], seeds: &[u64]) -> Result<()> {
    if t_list.is_empty() || t_list.windows(2).any(|w| w[1] <= w[0]) || t_list[0] < 1 {
        return Err(Error::param("t_list must be positive and strictly increasing"));
    }
    if seeds.len() < 2 {
        return Err(Error::param("at least two seeds are required"));
    }
    Ok(())
}

/// Runs the `(t, seed)` grid; seeds in parallel, `t` ascending with Dirichlet
/// correctors zero-extended as warm starts.
pub fn estimate_whom(xi: &Mat, t_list: &[i64], seeds: &[u64], config: &CellConfig) -> Result<HomogenizedEstimate> {
    check_sweep(t_list, seeds)?;
    config.validate()?;
    config.check_xi(xi)?;
    let per_seed: Vec<Vec<CellSample>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut out = Vec::with_capacity(t_list.len());
            let mut prev: Option<(Arc<Mesh>, DiscreteField)> = None;
            for &t in t_list {
                let cp = CellProblem::new(xi.clone(), t, seed, config.clone())?;
                let problem = cp.energy_problem()?;
                let warm = match (&prev, config.bc) {
                    (Some((mesh, u)), Boundary::Dirichlet) => Some(embed_corrector(mesh, u, &problem.mesh)),
                    _ => None,
                };
                let clock = Instant::now();
                let (sol, upper) = solve_cell(&problem, warm.as_ref(), &config.solver)?;
                let vol = cp.window().volume();
                out.push(CellSample {
                    t,
                    seed,
                    value: sol.energy / vol,
                    upper: upper / vol,
                    iterations: sol.iterations,
                    converged: sol.converged,
                    wallclock_s: clock.elapsed().as_secs_f64(),
                });
                prev = Some((problem.mesh.clone(), sol.u));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut samples: Vec<CellSample> = per_seed.into_iter().flatten().collect();
    samples.sort_by(|a, b| (a.t, a.seed).cmp(&(b.t, b.seed)));
    let per_t: Vec<TSummary> = t_list
        .iter()
        .map(|&t| {
            let vals: Vec<f64> = samples.iter().filter(|s| s.t == t).map(|s| s.value).collect();
            let (mean, stderr) = mean_and_stderr(&vals);
            TSummary {
                t,
                mean,
                stderr,
                samples: vals.len(),
            }
        })
        .collect();
    let fit = fit_inverse_t(
        &per_t.iter().map(|s| s.t as f64).collect::<Vec<_>>(),
        &per_t.iter().map(|s| s.mean).collect::<Vec<_>>(),
        &per_t.iter().map(|s| s.stderr).collect::<Vec<_>>(),
    );
    Ok(HomogenizedEstimate {
        xi: xi.as_slice().to_vec(),
        all_converged: samples.iter().all(|s| s.converged),
        samples,
        per_t,
        value: fit.limit,
        fit,
    })
}

/// Volume average of `∂ξW(s, ξ + ∇φ)` over a solved cell.
pub fn averaged_stress(problem: &EnergyProblem, corrector: &DiscreteField) -> Mat {
    let grads = corrector.gradients(&problem.mesh);
    let (m, d) = (problem.xi.rows(), problem.xi.cols());
    let mut buf = vec![0.0; m * d];
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(grads.len()); m * d];
    for (e, g) in grads.iter().enumerate() {
        let xi = problem.xi.add(g);
        problem.integrand.value_and_gradient(&problem.states[e], xi.as_slice(), &mut buf);
        for (c, v) in columns.iter_mut().zip(&buf) {
            c.push(*v);
        }
    }
    let n = grads.len() as f64;
    Mat::from_vec(m, d, columns.iter().map(|c| pairwise_sum(c) / n).collect()).expect("shape")
}

/// `∂W_hom(ξ)` by averaging `∂ξW` over the cell correctors, per `t` over
/// seeds, extrapolated in `1/t` componentwise.
pub fn whom_gradient(xi: &Mat, t_list: &[i64], seeds: &[u64], config: &CellConfig) -> Result<Mat> {
    if t_list.is_empty() || seeds.is_empty() {
        return Err(Error::param("whom_gradient needs at least one t and one seed"));
    }
    if !config.integrand.is_differentiable() {
        return Err(Error::Nonsmooth(format!(
            "{:?} is not differentiable; estimate the gradient by finite differences of estimate_whom",
            config.integrand.family
        )));
    }
    config.check_xi(xi)?;
    let jobs: Vec<(i64, u64)> = t_list.iter().flat_map(|&t| seeds.iter().map(move |&s| (t, s))).collect();
    let stresses: Vec<Mat> = jobs
        .par_iter()
        .map(|&(t, seed)| {
            let cp = CellProblem::new(xi.clone(), t, seed, config.clone())?;
            let problem = cp.energy_problem()?;
            let (sol, _) = solve_cell(&problem, None, &config.solver)?;
            Ok(averaged_stress(&problem, &sol.u))
        })
        .collect::<Result<_>>()?;
    let k = xi.len();
    let mut out = vec![0.0; k];
    let ts: Vec<f64> = t_list.iter().map(|&t| t as f64).collect();
    for (c, slot) in out.iter_mut().enumerate() {
        let mut means = Vec::new();
        let mut errs = Vec::new();
        for chunk in stresses.chunks(seeds.len()) {
            let vals: Vec<f64> = chunk.iter().map(|m| m.as_slice()[c]).collect();
            let (mean, se) = mean_and_stderr(&vals);
            means.push(mean);
            errs.push(se);
        }
        *slot = fit_inverse_t(&ts, &means, &errs).limit;
    }
    Mat::from_vec(xi.rows(), xi.cols(), out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub triples: usize,
    pub max_violation: f64,
    pub violations: usize,
}

/// Midpoint convexity over every triple `(ξ₁, (ξ₁+ξ₂)/2, ξ₂)` present in the list.
pub fn verify_convexity(estimates: &[(Mat, f64)], tol: f64) -> ConvexityReport {
    let mut report = ConvexityReport::default();
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            let mid = estimates[i].0.midpoint(&estimates[j].0);
            let scale = 1.0 + mid.norm();
            for (x, v) in estimates {
                if x.sub(&mid).norm() <= 1e-12 * scale {
                    report.triples += 1;
                    let excess = v - 0.5 * (estimates[i].1 + estimates[j].1);
                    report.max_violation = report.max_violation.max(excess);
                    if excess > tol {
                        report.violations += 1;
                    }
                }
            }
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleCheck {
    pub mu1: f64,
    pub mu2: f64,
    pub mu_mid: f64,
    /// `μ_mid − (μ₁ + μ₂)/2`; nonpositive up to solver tolerance.
    pub excess: f64,
}

/// Solves the cell at `ξ₁`, `ξ₂` and their midpoint on one realization; the
/// midpoint starts from the averaged correctors.
pub fn convexity_triple(xi1: &Mat, xi2: &Mat, t: i64, seed: u64, config: &CellConfig) -> Result<TripleCheck> {
    let r1 = multicell_estimate(&CellProblem::new(xi1.clone(), t, seed, config.clone())?)?;
    let r2 = multicell_estimate(&CellProblem::new(xi2.clone(), t, seed, config.clone())?)?;
    let mut avg = r1.corrector.clone();
    for (a, b) in avg.values.iter_mut().zip(&r2.corrector.values) {
        *a = 0.5 * (*a + b);
    }
    let mid = CellProblem::new(xi1.midpoint(xi2), t, seed, config.clone())?;
    let rm = multicell_estimate_from(&mid, Some(&avg))?;
    Ok(TripleCheck {
        mu1: r1.value,
        mu2: r2.value,
        mu_mid: rm.value,
        excess: rm.value - 0.5 * (r1.value + r2.value),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    /// Estimates below `|ξ|^p − slack` when a coercivity exponent is given.
    pub coercivity_violations: usize,
    pub min_margin: f64,
    /// Empirical `C₀` with `W_hom(ξ̃) ≤ C₀ (W_hom(ξ) + 1)` over row-zeroings
    /// present in the list.
    pub c0: f64,
    pub mask_pairs: usize,
}

pub fn verify_growth(estimates: &[(Mat, f64)], p: Option<f64>, slack: f64) -> GrowthReport {
    let mut report = GrowthReport {
        coercivity_violations: 0,
        min_margin: f64::INFINITY,
        c0: 0.0,
        mask_pairs: 0,
    };
    for (xi, v) in estimates {
        if let Some(p) = p {
            let margin = v - xi.norm().powf(p);
            report.min_margin = report.min_margin.min(margin);
            if margin < -slack {
                report.coercivity_violations += 1;
            }
        }
        for mask in 0..(1u32 << xi.rows()) {
            let reduced = xi.zero_rows(mask);
            if let Some((_, vr)) = estimates.iter().find(|(x, _)| x.sub(&reduced).norm() <= 1e-12) {
                report.mask_pairs += 1;
                report.c0 = report.c0.max(vr / (v + 1.0));
            }
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityReport {
    pub skipped: bool,
    pub notice: Option<String>,
    /// `μ_ξ(tQ)`, unnormalized.
    pub whole: f64,
    /// `Σ μ_ξ(sub-cube)` over the `2^d` half-cubes.
    pub parts: f64,
    /// `whole − parts`; nonpositive by gluing.
    pub excess: f64,
}

pub fn subadditivity_check(xi: &Mat, t: i64, seed: u64, config: &CellConfig) -> Result<SubadditivityReport> {
    if config.bc != Boundary::Dirichlet {
        return Ok(SubadditivityReport {
            skipped: true,
            notice: Some("subadditivity needs zero boundary values; skipped for periodic cells".into()),
            whole: f64::NAN,
            parts: f64::NAN,
            excess: f64::NAN,
        });
    }
    let cp = CellProblem::new(xi.clone(), t, seed, config.clone())?;
    let d = config.field.dim;
    let big = cp.energy_problem()?;
    let mut glued = zero_start(&big);
    let mut parts = Vec::with_capacity(1 << d);
    for corner in 0..(1usize << d) {
        let lower: Vec<i64> = (0..d).map(|k| if corner >> k & 1 == 1 { 0 } else { -t }).collect();
        let window = Window {
            upper: lower.iter().map(|l| l + t).collect(),
            lower,
        };
        let sub = config.window_problem(xi, &window, Boundary::Dirichlet, seed)?;
        let (sol, _) = solve_cell(&sub, None, &config.solver)?;
        parts.push(sol.energy);
        let (lo, hi) = (&window.lower, &window.upper);
        for node in 0..big.mesh.n_nodes() {
            let x = big.mesh.node_coords(node);
            let inside = x
                .iter()
                .enumerate()
                .all(|(k, &v)| v >= lo[k] as f64 && v <= hi[k] as f64);
            if inside {
                let v = sub.mesh.interpolate(&sol.u, &x);
                glued.values[node * sol.u.m..(node + 1) * sol.u.m].copy_from_slice(&v);
            }
        }
    }
    let parts = pairwise_sum(&parts);
    let sol = continuation_minimize(&big, &glued, &config.solver)?;
    Ok(SubadditivityReport {
        skipped: false,
        notice: None,
        whole: sol.energy,
        parts,
        excess: sol.energy - parts,
    })
}

/// Legendre transform of a tabulated 1D `W_hom` at `η`.
pub fn tabulated_conjugate(points: &[(f64, f64)], eta: f64) -> f64 {
    legendre::discrete_conjugate(points, eta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityPoint {
    pub eta: f64,
    /// Conjugate of the tabulated cell values.
    pub from_table: f64,
    /// Cell average of `W*(s, η)` over the same realization.
    pub sampled: f64,
    pub relative_error: f64,
}

/// Scalar 1D check of `W_hom* = E[W*]`: tabulates the cell values of one
/// realization on `xi_grid`, conjugates numerically and compares against the
/// window average of the pointwise conjugates.
///
/// The `n_eta` test slopes split `(0, η_max)` evenly, `η_max` being the
/// smaller end slope of the table, so every maximizer lies inside the grid.
pub fn duality_check(config: &CellConfig, t: i64, seed: u64, xi_grid: &[f64], n_eta: usize) -> Result<Vec<DualityPoint>> {
    if config.integrand.rows != 1 || config.integrand.cols != 1 {
        return Err(Error::param("the duality oracle is one-dimensional and scalar"));
    }
    let table: Vec<(f64, f64)> = xi_grid
        .par_iter()
        .map(|&x| {
            let r = multicell_estimate(&CellProblem::new(Mat::scalar(x), t, seed, config.clone())?)?;
            Ok((x, r.value))
        })
        .collect::<Result<_>>()?;
    let n = table.len();
    if n < 3 || table.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::param("duality grid needs at least three increasing points"));
    }
    let right = (table[n - 1].1 - table[n - 2].1) / (table[n - 1].0 - table[n - 2].0);
    let left = (table[0].1 - table[1].1) / (table[1].0 - table[0].0);
    let eta_max = right.min(left);
    let etas: Vec<f64> = (1..=n_eta).map(|k| eta_max * k as f64 / (n_eta + 1) as f64).collect();
    let real = realize_window(&config.field, &Window::centered_cube(t, 1), seed)?;
    etas.iter()
        .map(|&eta| {
            let terms = real
                .states()
                .iter()
                .map(|s| config.integrand.radial_conjugate(s, eta.abs(), 1e8))
                .collect::<Result<Vec<_>>>()?;
            let sampled = pairwise_sum(&terms) / terms.len() as f64;
            let from_table = tabulated_conjugate(&table, eta);
            Ok(DualityPoint {
                eta,
                from_table,
                sampled,
                relative_error: (from_table - sampled).abs() / sampled.abs().max(f64::MIN_POSITIVE),
            })
        })
        .collect()
}
