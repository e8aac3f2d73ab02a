//! Limited-memory BFGS with Armijo backtracking on the free unknowns of an
//! [`EnergyProblem`], plus a Huber-smoothing continuation for degenerate growth.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretize::{DiscreteField, EnergyProblem};
use crate::error::{Error, Result};
use crate::matrix::{dot, sup_norm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Sup-norm of the free gradient at which the solve counts as converged.
    pub tol_grad: f64,
    /// Relative energy decrease regarded as stagnation.
    pub tol_energy: f64,
    /// Consecutive stagnating steps tolerated before giving up.
    pub patience: usize,
    pub memory: usize,
    /// Huber levels for [`continuation_minimize`], strictly decreasing.
    pub smoothing_path: Vec<f64>,
    pub armijo: f64,
    pub backtrack: f64,
    /// Scale the initial inverse Hessian by the Jacobi diagonal.
    pub precondition: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 20_000,
            tol_grad: 1e-6,
            tol_energy: 1e-14,
            patience: 500,
            memory: 12,
            smoothing_path: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            armijo: 1e-4,
            backtrack: 0.5,
            precondition: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_grad > 0.0 && self.tol_energy > 0.0) {
            return Err(Error::param("solver tolerances must be positive"));
        }
        if self.memory == 0 || self.max_iters == 0 {
            return Err(Error::param("memory and max_iters must be positive"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0 && self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::param("line-search constants must lie in (0, 1)"));
        }
        if self.smoothing_path.iter().any(|d| !(*d > 0.0))
            || self.smoothing_path.windows(2).any(|w| !(w[1] < w[0]))
        {
            return Err(Error::param("smoothing path must be positive and strictly decreasing"));
        }
        Ok(())
    }

    pub fn with_tol_grad(mut self, tol: f64) -> Self {
        self.tol_grad = tol;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: DiscreteField,
    pub energy: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(energy, grad_norm)` per accepted iterate, starting with the initial one.
    pub history: Vec<(f64, f64)>,
}

impl Solution {
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "iteration,energy,grad_norm")?;
        for (i, (e, g)) in self.history.iter().enumerate() {
            writeln!(out, "{i},{e:.17e},{g:.17e}")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn numerical(message: impl Into<String>, iterate: &[f64]) -> Error {
    Error::Numerical {
        message: message.into(),
        iterate: iterate.to_vec(),
    }
}

struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    memory: usize,
}

impl History {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: `−H g`, with `H₀ = γ diag(pinv)` when a
    /// preconditioner is given.
    fn direction(&self, g: &[f64], pinv: Option<&[f64]>) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; self.pairs.len()];
        for (i, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &q);
            axpy(-alpha[i], y, &mut q);
        }
        match pinv {
            Some(p) => {
                let gamma = match self.pairs.back() {
                    Some((s, y, _)) => dot(s, y) / y.iter().zip(p).map(|(a, b)| a * a * b).sum::<f64>(),
                    None => 1.0,
                };
                q.iter_mut().zip(p).for_each(|(v, pi)| *v *= gamma * pi);
            }
            None => {
                let gamma = match self.pairs.back() {
                    Some((s, y, _)) => dot(s, y) / dot(y, y),
                    None => 1.0 / sup_norm(g).max(1.0),
                };
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for (i, (s, y, rho)) in self.pairs.iter().enumerate() {
            let beta = rho * dot(y, &q);
            axpy(alpha[i] - beta, s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

const PRECONDITIONER_REFRESH: usize = 10;

/// Inverse of a Jacobi diagonal, floored relative to its largest entry so that
/// flat regions do not produce unbounded steps.
fn jacobi_inverse(diag: Vec<f64>) -> Option<Vec<f64>> {
    let top = diag.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0 && top.is_finite()) {
        return None;
    }
    let floor = 1e-8 * top;
    Some(diag.into_iter().map(|v| 1.0 / v.max(floor)).collect())
}

pub fn minimize(problem: &EnergyProblem, initial: &DiscreteField, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    problem.check_field(initial)?;
    let mut obj = problem.objective(initial);
    let mut x = problem.gather(initial);
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut f = obj.value_and_gradient(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(numerical("initial energy or gradient is not finite", &x));
    }
    let mut gnorm = sup_norm(&g);
    let mut history = vec![(f, gnorm)];
    let mut mem = History {
        pairs: VecDeque::with_capacity(opts.memory),
        memory: opts.memory,
    };
    let mut stalled = 0;
    let mut best_gnorm = gnorm;
    let mut iterations = 0;
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut pinv: Option<Vec<f64>> = None;

    while iterations < opts.max_iters && gnorm > opts.tol_grad {
        if opts.precondition && iterations % PRECONDITIONER_REFRESH == 0 {
            pinv = jacobi_inverse(obj.curvature_diagonal(&x));
        }
        let mut d = mem.direction(&g, pinv.as_deref());
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            mem.pairs.clear();
            d = mem.direction(&g, pinv.as_deref());
            dg = dot(&d, &g);
        }

        // Below this predicted decrease the energy test is round-off; convexity
        // then certifies descent through the sign of the directional derivative.
        let noise = 16.0 * f64::EPSILON * f.abs();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            xt.iter_mut().zip(&x).zip(&d).for_each(|((t, xi), di)| *t = xi + step * di);
            let predicted = -opts.armijo * step * dg;
            if predicted > noise {
                let ft = obj.value(&xt);
                if ft.is_finite() && ft <= f - predicted {
                    accepted = Some(obj.value_and_gradient(&xt, &mut gt));
                    break;
                }
            } else {
                let ft = obj.value_and_gradient(&xt, &mut gt);
                if ft.is_finite() && ft <= f + noise && dot(&gt, &d) <= 0.0 {
                    accepted = Some(ft);
                    break;
                }
            }
            step *= opts.backtrack;
        }

        let ft = match accepted {
            Some(ft) => ft,
            None => {
                // Near the optimum energy differences drown in round-off; accept
                // any non-increasing step that reduces the gradient.
                let mut fallback = None;
                let mut step = 1.0;
                for _ in 0..40 {
                    xt.iter_mut().zip(&x).zip(&d).for_each(|((t, xi), di)| *t = xi + step * di);
                    let ft = obj.value_and_gradient(&xt, &mut gt);
                    if ft.is_finite() && ft <= f && sup_norm(&gt) < gnorm {
                        fallback = Some(ft);
                        break;
                    }
                    step *= opts.backtrack;
                }
                match fallback {
                    Some(ft) => ft,
                    None if !mem.pairs.is_empty() => {
                        mem.pairs.clear();
                        continue;
                    }
                    None => break,
                }
            }
        };
        if !ft.is_finite() || gt.iter().any(|v| !v.is_finite()) {
            return Err(numerical("non-finite gradient at an accepted iterate", &xt));
        }

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let ss = dot(&s, &s);
        // cautious update: skip pairs with too little curvature
        if dot(&s, &y) > 1e-12 * ss * gnorm.max(1e-300).sqrt().min(1.0) && ss > 0.0 {
            mem.push(s, y);
        }

        let decrease = (f - ft) / f.abs().max(1.0);
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        f = ft;
        gnorm = sup_norm(&g);
        // progress in the gradient counts even when the energy no longer resolves it
        if gnorm < best_gnorm {
            best_gnorm = gnorm;
            stalled = 0;
        } else if decrease < opts.tol_energy {
            stalled += 1;
        } else {
            stalled = 0;
        }
        iterations += 1;
        history.push((f, gnorm));
        if stalled >= opts.patience {
            break;
        }
    }

    let mut u = initial.clone();
    let (f0, g0) = history[0];
    if f > f0 {
        // only round-off moves were taken; the start is at least as good
        return Ok(Solution {
            u,
            energy: f0,
            grad_norm: g0,
            iterations,
            converged: g0 <= opts.tol_grad,
            history,
        });
    }
    problem.scatter(&x, &mut u);
    Ok(Solution {
        u,
        energy: f,
        grad_norm: gnorm,
        iterations,
        converged: gnorm <= opts.tol_grad,
        history,
    })
}

/// Solves along the Huber levels of `opts.smoothing_path`, warm-starting each
/// level, and finishes with the unsmoothed integrand.
///
/// Levels are skipped when the integrand reports that smoothing is inactive.
pub fn continuation_minimize(problem: &EnergyProblem, initial: &DiscreteField, opts: &SolveOptions) -> Result<Solution> {
    opts.validate()?;
    let mut current = initial.clone();
    let mut iterations = 0;
    let mut history = Vec::new();
    for &delta in &opts.smoothing_path {
        let Some(smooth) = problem.integrand.smoothing(delta) else {
            continue;
        };
        let level = problem.with_integrand(smooth);
        let stage_opts = SolveOptions {
            tol_grad: opts.tol_grad.max(delta * 1e-2),
            ..opts.clone()
        };
        let sol = minimize(&level, &current, &stage_opts)?;
        iterations += sol.iterations;
        current = sol.u;
    }
    // smoothed stages may raise the true energy; never finish above the start
    if iterations > 0 {
        let e_start = crate::discretize::assemble_energy(problem, initial)?;
        let e_path = crate::discretize::assemble_energy(problem, &current)?;
        if !(e_path <= e_start) {
            current = initial.clone();
        }
    }
    let mut sol = minimize(problem, &current, opts)?;
    // the reported history is that of the unsmoothed energy
    history.extend(sol.history.drain(..));
    sol.history = history;
    sol.iterations += iterations;
    Ok(sol)
}
