//! Property suites run by `verify`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use stochhom::cutoff::random_trials;
use stochhom::discretize::Boundary;
use stochhom::homogenize::{
    convexity_triple, duality_check, multicell_estimate, subadditivity_check, verify_convexity, verify_growth,
    CellProblem,
};
use stochhom::integrand::{check_almost_even, check_mild_monotonicity, check_truncation, luxemburg_norm, MaterialState};
use stochhom::random_field::{hash_seed, realize_window, Window};
use stochhom::Mat;

use crate::commands::read_table;
use crate::config::{ExperimentConfig, Suite, VerifyTask};
use crate::failure::Failure;
use crate::manifest::OutDir;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: Suite,
    /// The invariant the suite asserts, named in failure messages.
    pub invariant: &'static str,
    pub passed: bool,
    pub details: Value,
}

fn uniform(seed: u64, k: usize) -> f64 {
    (hash_seed(seed, &[k as i64]) >> 11) as f64 / (1u64 << 53) as f64
}

fn random_xi(cfg: &ExperimentConfig, scale: f64, seed: u64) -> Mat {
    let (m, d) = (cfg.integrand.rows, cfg.integrand.cols);
    let data = (0..m * d).map(|k| scale * (2.0 * uniform(seed, k) - 1.0)).collect();
    Mat::from_vec(m, d, data).expect("shape")
}

/// Distinct states of the first realization's window, at most `cap`.
fn sample_states(cfg: &ExperimentConfig, v: &VerifyTask, cap: usize) -> Result<Vec<MaterialState>, Failure> {
    let real = realize_window(&cfg.field, &Window::centered_cube(v.t, cfg.dim()), cfg.realization_seed(0))?;
    let mut out: Vec<MaterialState> = Vec::new();
    for s in real.states() {
        if out.len() < cap && !out.contains(s) {
            out.push(*s);
        }
    }
    Ok(out)
}

/// `(realization seed, ξ-draw index)` pairs of a suite.
fn jobs(cfg: &ExperimentConfig, v: &VerifyTask) -> Vec<(u64, usize)> {
    cfg.seeds(v.realizations)
        .into_iter()
        .flat_map(|s| (0..v.samples).map(move |i| (s, i)))
        .collect()
}

fn convexity(cfg: &ExperimentConfig, v: &VerifyTask) -> Result<SuiteResult, Failure> {
    let cell = cfg.cell_config(v.bc, v.n_per_unit);
    let excesses = jobs(cfg, v)
        .par_iter()
        .map(|&(seed, i)| {
            let xi1 = random_xi(cfg, v.xi_scale, cfg.aux_seed(1, 2 * i as i64));
            let xi2 = random_xi(cfg, v.xi_scale, cfg.aux_seed(1, 2 * i as i64 + 1));
            Ok(convexity_triple(&xi1, &xi2, v.t, seed, &cell)?.excess)
        })
        .collect::<Result<Vec<f64>, stochhom::Error>>()?;
    let max = excesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = excesses.iter().filter(|&&e| e > v.convexity_tol).count();
    Ok(SuiteResult {
        suite: Suite::Convexity,
        invariant: "midpoint convexity of ξ ↦ μ_ξ",
        passed: violations == 0,
        details: json!({ "triples": excesses.len(), "max_excess": max, "violations": violations, "tol": v.convexity_tol }),
    })
}

fn bounds(cfg: &ExperimentConfig, v: &VerifyTask) -> Result<SuiteResult, Failure> {
    let cell = cfg.cell_config(v.bc, v.n_per_unit);
    let results = jobs(cfg, v)
        .par_iter()
        .map(|&(seed, i)| {
            let xi = random_xi(cfg, v.xi_scale, cfg.aux_seed(2, i as i64));
            let r = multicell_estimate(&CellProblem::new(xi, v.t, seed, cell.clone())?)?;
            Ok((r.value, r.upper))
        })
        .collect::<Result<Vec<(f64, f64)>, stochhom::Error>>()?;
    let above = results.iter().filter(|(val, up)| !(val <= up)).count();
    let negative = results.iter().filter(|(val, _)| !(*val >= 0.0)).count();
    Ok(SuiteResult {
        suite: Suite::Bounds,
        invariant: "0 ≤ μ_ξ ≤ window average of W(·, ξ)",
        passed: above == 0 && negative == 0,
        details: json!({ "estimates": results.len(), "upper_violations": above, "negative": negative }),
    })
}

fn growth(cfg: &ExperimentConfig, v: &VerifyTask) -> Result<SuiteResult, Failure> {
    let cell = cfg.cell_config(v.bc, v.n_per_unit);
    let seed = cfg.realization_seed(0);
    let mut xis: Vec<Mat> = Vec::new();
    for i in 0..v.samples {
        let xi = random_xi(cfg, v.xi_scale, cfg.aux_seed(3, i as i64));
        for mask in 0..(1u32 << xi.rows()) {
            let r = xi.zero_rows(mask);
            if !xis.contains(&r) {
                xis.push(r);
            }
        }
    }
    let estimates = xis
        .par_iter()
        .map(|xi| Ok((xi.clone(), multicell_estimate(&CellProblem::new(xi.clone(), v.t, seed, cell.clone())?)?.value)))
        .collect::<Result<Vec<(Mat, f64)>, stochhom::Error>>()?;
    let report = verify_growth(&estimates, v.coercivity_p, 1e-8);
    Ok(SuiteResult {
        suite: Suite::Growth,
        invariant: "coercivity and row-zeroing growth of W_hom",
        passed: report.coercivity_violations == 0 && report.c0.is_finite(),
        details: serde_json::to_value(&report)?,
    })
}

fn subadditivity(cfg: &ExperimentConfig, v: &VerifyTask) -> Result<SuiteResult, Failure> {
    let cell = cfg.cell_config(Boundary::Dirichlet, v.n_per_unit);
    let excesses = jobs(cfg, v)
        .par_iter()
        .map(|&(seed, i)| {
            let xi = random_xi(cfg, v.xi_scale, cfg.aux_seed(4, i as i64));
            Ok(subadditivity_check(&xi, v.t, seed, &cell)?.excess)
        })
        .collect::<Result<Vec<f64>, stochhom::Error>>()?;
    let max = excesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = excesses.iter().filter(|&&e| e > v.subadditivity_tol).count();
    Ok(SuiteResult {
        suite: Suite::Subadditivity,
        invariant: "subadditivity of μ_ξ over nested Dirichlet cubes",
        passed: violations == 0,
        details: json!({ "checks": excesses.len(), "max_excess": max, "violations": violations, "tol": v.subadditivity_tol }),
    })
}

fn pair_check(cfg: &ExperimentConfig, v: &VerifyTask, suite: Suite) -> Result<SuiteResult, Failure> {
    let states = sample_states(cfg, v, 16)?;
    let xis: Vec<Mat> = (0..4 * v.samples)
        .map(|i| random_xi(cfg, v.xi_scale, cfg.aux_seed(5, i as i64)))
        .collect();
    let (report, invariant) = if suite == Suite::MildMonotonicity {
        (check_mild_monotonicity(&cfg.integrand, &states, &xis), "mild monotonicity under row-zeroing")
    } else {
        (check_almost_even(&cfg.integrand, &states, &xis), "almost evenness")
    };
    Ok(SuiteResult {
        suite,
        invariant,
        passed: report.is_bounded(),
        details: serde_json::to_value(&report)?,
    })
}

fn cutoff(cfg: &ExperimentConfig, v: &VerifyTask) -> Result<SuiteResult, Failure> {
    let summary = random_trials(v.cutoff_trials, cfg.aux_seed(6, 0), v.cutoff_rho)?;
    Ok(SuiteResult {
        suite: Suite::Cutoff,
        invariant: "good-radius measure and cut-off shape",
        passed: summary.measure_violations == 0 && summary.invariant_violations == 0 && summary.max_constant.is_finite(),
        details: json!({
            "trials": summary.trials.len(),
            "measure_violations": summary.measure_violations,
            "invariant_violations": summary.invariant_violations,
            "max_constant": summary.max_constant,
        }),
    })
}

fn luxemburg(cfg: &ExperimentConfig, v: &VerifyTask) -> Result<SuiteResult, Failure> {
    let real = realize_window(&cfg.field, &Window::centered_cube(v.t, cfg.dim()), cfg.realization_seed(0))?;
    let states = real.states();
    let vol = 1.0 / states.len() as f64;
    let volumes = vec![vol; states.len()];
    let field = |tag: i64| -> Vec<Mat> {
        (0..states.len())
            .map(|e| random_xi(cfg, v.xi_scale, cfg.aux_seed(tag, e as i64)))
            .collect()
    };
    let mut worst_homogeneity: f64 = 0.0;
    let mut worst_triangle = f64::NEG_INFINITY;
    let mut worst_modular: f64 = 0.0;
    for i in 0..v.samples {
        let g = field(100 + 2 * i as i64);
        let h = field(101 + 2 * i as i64);
        let ng = luxemburg_norm(&cfg.integrand, states, &g, &volumes);
        let nh = luxemburg_norm(&cfg.integrand, states, &h, &volumes);
        for lambda in [0.5, 2.0, -3.0] {
            let scaled: Vec<Mat> = g.iter().map(|m| m.scaled(lambda)).collect();
            let n = luxemburg_norm(&cfg.integrand, states, &scaled, &volumes);
            worst_homogeneity = worst_homogeneity.max((n - lambda.abs() * ng).abs() / ng.max(f64::MIN_POSITIVE));
        }
        let sum: Vec<Mat> = g.iter().zip(&h).map(|(a, b)| a.add(b)).collect();
        let ns = luxemburg_norm(&cfg.integrand, states, &sum, &volumes);
        worst_triangle = worst_triangle.max(ns - ng - nh);
        let modular: f64 = states
            .iter()
            .zip(&g)
            .map(|(s, m)| vol * cfg.integrand.profile(s, m.norm() / ng))
            .sum();
        worst_modular = worst_modular.max((modular - 1.0).abs());
    }
    let passed = worst_homogeneity <= 1e-10 && worst_triangle <= 1e-12 && worst_modular <= 1e-9;
    Ok(SuiteResult {
        suite: Suite::Luxemburg,
        invariant: "Luxemburg gauge is a norm with unit modular",
        passed,
        details: json!({
            "samples": v.samples,
            "homogeneity_error": worst_homogeneity,
            "triangle_excess": worst_triangle,
            "modular_error": worst_modular,
        }),
    })
}

fn duality(cfg: &ExperimentConfig, v: &VerifyTask) -> Result<SuiteResult, Failure> {
    let cell = cfg.cell_config(v.bc, v.n_per_unit);
    let grid: Vec<f64> = (0..v.duality_points)
        .map(|i| -v.duality_half_width + 2.0 * v.duality_half_width * i as f64 / (v.duality_points - 1) as f64)
        .collect();
    let points = duality_check(&cell, v.duality_t, cfg.realization_seed(0), &grid, 10)?;
    let worst = points.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    Ok(SuiteResult {
        suite: Suite::Duality,
        invariant: "W_hom* = E[W*] in one dimension",
        passed: worst <= v.duality_tol,
        details: json!({ "points": points, "max_relative_error": worst, "tol": v.duality_tol }),
    })
}

fn truncation(cfg: &ExperimentConfig, v: &VerifyTask) -> Result<SuiteResult, Failure> {
    let states = sample_states(cfg, v, 8)?;
    let xis: Vec<Mat> = (0..4 * v.samples)
        .map(|i| random_xi(cfg, 2.0 * v.xi_scale, cfg.aux_seed(8, i as i64)))
        .collect();
    let report = check_truncation(&cfg.integrand, &states, &v.truncation_levels, cfg.truncation_q(v), &xis)?;
    Ok(SuiteResult {
        suite: Suite::Truncation,
        invariant: "monotone truncation W_k ↑ W with q-growth",
        passed: report.violations() == 0,
        details: serde_json::to_value(&report)?,
    })
}

fn table_convexity(v: &VerifyTask, base_dir: &Path) -> Result<SuiteResult, Failure> {
    let path = base_dir.join(v.table.as_ref().expect("validated"));
    let table = read_table(&path)?;
    let estimates: Vec<(Mat, f64)> = table.grid().into_iter().zip(table.values.iter().copied()).collect();
    let report = verify_convexity(&estimates, v.convexity_tol);
    Ok(SuiteResult {
        suite: Suite::TableConvexity,
        invariant: "midpoint convexity of the tabulated W_hom",
        passed: report.violations == 0,
        details: serde_json::to_value(&report)?,
    })
}

fn run_suite(cfg: &ExperimentConfig, v: &VerifyTask, base_dir: &Path, suite: Suite) -> Result<SuiteResult, Failure> {
    match suite {
        Suite::Convexity => convexity(cfg, v),
        Suite::Bounds => bounds(cfg, v),
        Suite::Growth => growth(cfg, v),
        Suite::Subadditivity => subadditivity(cfg, v),
        Suite::MildMonotonicity | Suite::AlmostEven => pair_check(cfg, v, suite),
        Suite::Cutoff => cutoff(cfg, v),
        Suite::Luxemburg => luxemburg(cfg, v),
        Suite::Duality => duality(cfg, v),
        Suite::Truncation => truncation(cfg, v),
        Suite::TableConvexity => table_convexity(v, base_dir),
    }
}

pub fn verify(cfg: &ExperimentConfig, base_dir: &Path, out: &OutDir) -> Result<(), Failure> {
    let v = cfg
        .verify
        .as_ref()
        .ok_or_else(|| Failure::Config("the config has no verify block".into()))?;
    let mut results = Vec::new();
    for &suite in &v.suites {
        let r = run_suite(cfg, v, base_dir, suite)?;
        println!("{} {:?}: {}", if r.passed { "PASS" } else { "FAIL" }, suite, r.invariant);
        results.push(r);
    }
    out.json("verify_report.json", &json!({ "suites": results }))?;
    out.csv("verify_summary.csv", |w| {
        writeln!(w, "suite,passed")?;
        for r in &results {
            writeln!(w, "{},{}", serde_json::to_value(r.suite).expect("enum").as_str().unwrap_or("?"), r.passed)?;
        }
        Ok(())
    })?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({})", r.invariant, serde_json::to_value(r.suite).expect("enum").as_str().unwrap_or("?")))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(failed.join("; ")))
    }
}
