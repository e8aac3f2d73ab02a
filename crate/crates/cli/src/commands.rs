//! `whom`, `bvp` and `field-dump`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use stochhom::bvp::{convergence_study, HomModel, WhomTable};
use stochhom::discretize::Boundary;
use stochhom::homogenize::{estimate_whom, whom_gradient, HomogenizedEstimate, TSummary};
use stochhom::random_field::{realize_window, Window};
use stochhom::stats::InverseFit;
use stochhom::Mat;

use crate::config::{ExperimentConfig, HomSource};
use crate::failure::Failure;
use crate::manifest::OutDir;

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub strict: bool,
    pub deterministic: bool,
}

fn rows_of(xi: &Mat) -> Vec<Vec<f64>> {
    (0..xi.rows()).map(|i| xi.row(i).to_vec()).collect()
}

fn bc_name(bc: Boundary) -> &'static str {
    match bc {
        Boundary::Dirichlet => "dirichlet",
        Boundary::Periodic => "periodic",
    }
}

#[derive(Serialize)]
struct EstimateSummary {
    xi: Vec<Vec<f64>>,
    value: f64,
    fit: InverseFit,
    per_t: Vec<TSummary>,
    all_converged: bool,
    flagged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradient: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct WhomSummary {
    bc: &'static str,
    t_list: Vec<i64>,
    seeds: Vec<u64>,
    estimates: Vec<EstimateSummary>,
    flagged: usize,
}

/// An estimate is flagged when a solve did not converge, a value is not
/// finite, or a sample breaks `0 ≤ μ ≤ window average of W`.
fn is_flagged(e: &HomogenizedEstimate) -> bool {
    !e.all_converged
        || !e.value.is_finite()
        || e.samples.iter().any(|s| {
            let slack = 1e-12 * (1.0 + s.upper.abs());
            !s.value.is_finite() || s.value < -slack || s.value > s.upper + slack
        })
}

pub fn whom(cfg: &ExperimentConfig, out: &OutDir, opts: RunOptions) -> Result<(), Failure> {
    let task = cfg
        .whom
        .as_ref()
        .ok_or_else(|| Failure::Config("the config has no whom block".into()))?;
    let cell = cfg.cell_config(task.bc, task.n_per_unit);
    let seeds = cfg.seeds(task.seeds);
    let xis = cfg.xi_list(task)?;
    let estimates: Vec<(HomogenizedEstimate, Option<Mat>)> = xis
        .par_iter()
        .map(|xi| {
            let est = estimate_whom(xi, &task.t_list, &seeds, &cell)?;
            let grad = if task.gradient {
                Some(whom_gradient(xi, &task.t_list, &seeds, &cell)?)
            } else {
                None
            };
            Ok((est, grad))
        })
        .collect::<Result<_, stochhom::Error>>()?;

    let (m, d) = (cfg.integrand.rows, cfg.integrand.cols);
    out.csv("whom_samples.csv", |w| {
        let mut header: Vec<String> = (0..m).flat_map(|i| (0..d).map(move |j| format!("xi_{i}_{j}"))).collect();
        header.extend(["t", "seed", "bc", "value", "iterations", "converged", "wallclock_s"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for (xi, (est, _)) in xis.iter().zip(&estimates) {
            let xi_cols: Vec<String> = xi.as_slice().iter().map(|v| v.to_string()).collect();
            for s in &est.samples {
                let clock = if opts.deterministic { 0.0 } else { s.wallclock_s };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    xi_cols.join(","),
                    s.t,
                    s.seed,
                    bc_name(task.bc),
                    s.value,
                    s.iterations,
                    s.converged,
                    clock
                )?;
            }
        }
        Ok(())
    })?;

    let summaries: Vec<EstimateSummary> = xis
        .iter()
        .zip(&estimates)
        .map(|(xi, (est, grad))| EstimateSummary {
            xi: rows_of(xi),
            value: est.value,
            fit: est.fit,
            per_t: est.per_t.clone(),
            all_converged: est.all_converged,
            flagged: is_flagged(est),
            gradient: grad.as_ref().map(rows_of),
        })
        .collect();
    let flagged = summaries.iter().filter(|s| s.flagged).count();
    for s in &summaries {
        println!("xi={:?} W_hom≈{:.6} (fit residual {:.2e}){}", s.xi, s.value, s.fit.residual, if s.flagged { " FLAGGED" } else { "" });
    }
    out.json(
        "whom_summary.json",
        &WhomSummary {
            bc: bc_name(task.bc),
            t_list: task.t_list.clone(),
            seeds,
            estimates: summaries,
            flagged,
        },
    )?;
    if flagged > 0 {
        let msg = format!("{flagged} estimate(s) flagged: nonconverged solves or bound violations");
        if opts.strict {
            return Err(Failure::Numerical(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

#[derive(Serialize)]
struct BvpSummary {
    seeds: Vec<u64>,
    mean_gaps: Vec<(f64, f64)>,
    final_relative_gap: f64,
    gap_decreasing: bool,
    gap_threshold: Option<f64>,
    passed: Option<bool>,
    all_converged: bool,
}

/// Reads a table written by `bvp` (or a bare table), ignoring any manifest.
pub fn read_table(path: &Path) -> Result<WhomTable, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read table {}: {e}", path.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("manifest");
    }
    let table: WhomTable = serde_json::from_value(value).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    table.validate()?;
    Ok(table)
}

fn estimate_table(cfg: &ExperimentConfig, source: &HomSource) -> Result<WhomTable, Failure> {
    let HomSource::Estimate { axes, t_list, seeds, bc, n_per_unit } = source else {
        unreachable!("called for estimated tables only");
    };
    let cell = cfg.cell_config(*bc, *n_per_unit);
    let seeds = cfg.seeds(*seeds);
    let proto = WhomTable {
        rows: cfg.integrand.rows,
        cols: cfg.integrand.cols,
        axes: axes.clone(),
        values: Vec::new(),
    };
    let values = proto
        .grid()
        .par_iter()
        .map(|xi| Ok(estimate_whom(xi, t_list, &seeds, &cell)?.value))
        .collect::<Result<Vec<f64>, stochhom::Error>>()?;
    Ok(WhomTable::new(proto.rows, proto.cols, proto.axes, values)?)
}

pub fn bvp(cfg: &ExperimentConfig, base_dir: &Path, out: &OutDir, opts: RunOptions) -> Result<(), Failure> {
    let task = cfg
        .bvp
        .as_ref()
        .ok_or_else(|| Failure::Config("the config has no bvp block".into()))?;
    let bvp_cfg = cfg.bvp_config(task)?;
    let model = match &task.homogenized {
        HomSource::Exact { state } => HomModel::Exact(*state),
        HomSource::Table { path } => HomModel::Table(read_table(&base_dir.join(path))?),
        source @ HomSource::Estimate { .. } => {
            let table = estimate_table(cfg, source)?;
            out.json("whom_table.json", &table)?;
            HomModel::Table(table)
        }
    };
    let seeds = cfg.seeds(task.seeds);
    let study = convergence_study(&bvp_cfg, &model, &seeds)?;
    let mut body = Vec::new();
    study.write_csv(&mut body)?;
    out.csv("bvp_study.csv", |w| w.write_all(&body))?;
    let all_converged = study.rows.iter().all(|r| r.converged);
    for (eps, gap) in &study.mean_gaps {
        println!("eps={eps} mean gap={gap:.3e}");
    }
    println!(
        "final relative gap {:.3e}, decreasing: {}",
        study.final_relative_gap, study.gap_decreasing
    );
    out.json(
        "bvp_summary.json",
        &BvpSummary {
            seeds,
            mean_gaps: study.mean_gaps.clone(),
            final_relative_gap: study.final_relative_gap,
            gap_decreasing: study.gap_decreasing,
            gap_threshold: task.gap_threshold,
            passed: study.passed,
            all_converged,
        },
    )?;
    if study.passed == Some(false) {
        return Err(Failure::Invariant(format!(
            "energy gap: final relative gap {:.3e} exceeds threshold {:.3e}",
            study.final_relative_gap,
            task.gap_threshold.unwrap_or(f64::NAN)
        )));
    }
    if !all_converged {
        let msg = "some ε-problems did not converge".to_string();
        if opts.strict {
            return Err(Failure::Numerical(msg));
        }
        eprintln!("warning: {msg}");
    }
    Ok(())
}

pub fn field_dump(cfg: &ExperimentConfig, out: &OutDir) -> Result<(), Failure> {
    let task = cfg
        .field_dump
        .as_ref()
        .ok_or_else(|| Failure::Config("the config has no field_dump block".into()))?;
    let seed = cfg.realization_seed(task.realization);
    let window = Window::centered_cube(task.t, cfg.dim());
    let real = realize_window(&cfg.field, &window, seed)?;
    let prefix = out.path("field");
    real.write_dump(&prefix)?;
    // add the manifest to the binary dump's JSON header
    let header_path = prefix.with_extension("json");
    let header: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&header_path)?)?;
    out.json("field.json", &header)?;

    let cpu = cfg.field.cells_per_unit as i64;
    let counts = real.counts().to_vec();
    let d = counts.len();
    out.csv("field.csv", |w| {
        let mut header: Vec<String> = (0..d).map(|k| format!("z_{k}")).collect();
        header.extend(["coeff", "exponent"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for (linear, s) in real.states().iter().enumerate() {
            let mut z = vec![0i64; d];
            let mut rem = linear;
            for k in (0..d).rev() {
                z[k] = window.lower[k] * cpu + (rem % counts[k]) as i64;
                rem /= counts[k];
            }
            let z: Vec<String> = z.iter().map(i64::to_string).collect();
            writeln!(w, "{},{},{}", z.join(","), s.coeff, s.exponent)?;
        }
        Ok(())
    })?;
    println!("wrote {} cells (seed {seed}) to {}", real.states().len(), out.dir.display());
    Ok(())
}
