//! Experiment configuration: one JSON file per run, strict schema, defaults
//! filled in and written back next to the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stochhom::bvp::{AffineDatum, BvpConfig, ExponentCondition, ForceSpec, WhomTable};
use stochhom::discretize::{Boundary, BoxDomain};
use stochhom::homogenize::CellConfig;
use stochhom::integrand::{IntegrandSpec, MaterialState};
use stochhom::random_field::{hash_seed, FieldSpec};
use stochhom::solver::SolveOptions;
use stochhom::Mat;

use crate::failure::Failure;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub integrand: IntegrandSpec,
    pub field: FieldSpec,
    #[serde(default)]
    pub solver: SolveOptions,
    /// Output directory, overridden by `--out`.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub whom: Option<WhomTask>,
    #[serde(default)]
    pub bvp: Option<BvpTask>,
    #[serde(default)]
    pub verify: Option<VerifyTask>,
    #[serde(default)]
    pub field_dump: Option<FieldDumpTask>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    /// Every entry of `ξ` runs over `points` equispaced values in `[−half_width, half_width]`.
    pub half_width: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhomTask {
    /// Explicit `ξ` values, each as `m` rows of length `d`.
    #[serde(default)]
    pub xi: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub xi_lattice: Option<Lattice>,
    pub t_list: Vec<i64>,
    /// Number of realizations.
    pub seeds: usize,
    #[serde(default = "dirichlet")]
    pub bc: Boundary,
    pub n_per_unit: usize,
    /// Also estimate `∂W_hom` by corrector averaging.
    #[serde(default)]
    pub gradient: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HomSource {
    /// Constant coefficients: the original integrand at a fixed state.
    Exact { state: MaterialState },
    /// Tabulate `W_hom` by cell estimates on a grid.
    Estimate {
        axes: Vec<Vec<f64>>,
        t_list: Vec<i64>,
        seeds: usize,
        #[serde(default = "periodic")]
        bc: Boundary,
        n_per_unit: usize,
    },
    /// A previously written table, relative to the config file.
    Table { path: PathBuf },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BvpTask {
    pub domain: BoxDomain,
    pub g: AffineDatum,
    #[serde(default)]
    pub force: ForceSpec,
    pub eps_list: Vec<f64>,
    #[serde(default = "four")]
    pub nodes_per_cell: usize,
    #[serde(default = "one")]
    pub seeds: usize,
    #[serde(default)]
    pub strict_convexity: bool,
    #[serde(default)]
    pub gap_threshold: Option<f64>,
    #[serde(default)]
    pub exponents: Option<ExponentCondition>,
    pub homogenized: HomSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Convexity,
    Bounds,
    Growth,
    Subadditivity,
    MildMonotonicity,
    AlmostEven,
    Cutoff,
    Luxemburg,
    Duality,
    Truncation,
    TableConvexity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyTask {
    pub suites: Vec<Suite>,
    /// Cell half-width for the structural suites.
    pub t: i64,
    pub n_per_unit: usize,
    pub bc: Boundary,
    /// Random `ξ` (or `ξ` pairs) per realization.
    pub samples: usize,
    pub realizations: usize,
    /// Entries of random `ξ` are uniform in `[−xi_scale, xi_scale]`.
    pub xi_scale: f64,
    pub convexity_tol: f64,
    pub subadditivity_tol: f64,
    /// Checks `W_hom(ξ) ≥ |ξ|^p` when set.
    pub coercivity_p: Option<f64>,
    pub truncation_q: Option<f64>,
    pub truncation_levels: Vec<usize>,
    pub cutoff_trials: usize,
    pub cutoff_rho: f64,
    pub duality_t: i64,
    pub duality_half_width: f64,
    pub duality_points: usize,
    pub duality_tol: f64,
    /// Table checked by `table_convexity`, relative to the config file.
    pub table: Option<PathBuf>,
}

impl Default for VerifyTask {
    fn default() -> Self {
        VerifyTask {
            suites: Vec::new(),
            t: 2,
            n_per_unit: 2,
            bc: Boundary::Dirichlet,
            samples: 4,
            realizations: 2,
            xi_scale: 1.0,
            convexity_tol: 1e-6,
            subadditivity_tol: 1e-8,
            coercivity_p: None,
            truncation_q: None,
            truncation_levels: vec![1, 4, 16, 64],
            cutoff_trials: 100,
            cutoff_rho: 1.0,
            duality_t: 8,
            duality_half_width: 2.0,
            duality_points: 201,
            duality_tol: 0.03,
            table: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDumpTask {
    /// Window `(−t, t)^d`.
    pub t: i64,
    /// Realization index; the seed is derived from the master seed.
    #[serde(default)]
    pub realization: u64,
}

fn dirichlet() -> Boundary {
    Boundary::Dirichlet
}

fn periodic() -> Boundary {
    Boundary::Periodic
}

fn one() -> usize {
    1
}

fn four() -> usize {
    4
}

/// A loaded config together with the directory relative paths resolve against.
pub struct Loaded {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path) -> Result<Loaded, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base_dir })
}

fn bad(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

pub fn matrix(rows: &[Vec<f64>]) -> Result<Mat, Failure> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(bad("ξ rows must have equal length"));
    }
    Mat::from_vec(rows.len(), cols, rows.iter().flatten().copied().collect()).map_err(Failure::from)
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.field.dim
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.integrand.validate()?;
        self.field.validate()?;
        self.solver.validate()?;
        if self.integrand.cols != self.field.dim {
            return Err(bad(format!(
                "integrand.cols = {} but field.dim = {}",
                self.integrand.cols, self.field.dim
            )));
        }
        if let Some(w) = &self.whom {
            self.validate_whom(w)?;
        }
        if let Some(b) = &self.bvp {
            self.bvp_config(b)?.validate()?;
            if b.seeds == 0 {
                return Err(bad("bvp.seeds must be positive"));
            }
            if let HomSource::Estimate { axes, t_list, seeds, bc, n_per_unit } = &b.homogenized {
                if axes.len() != self.integrand.rows * self.integrand.cols {
                    return Err(bad("bvp.homogenized.axes needs one axis per entry of ξ"));
                }
                check_sweep(t_list, *seeds)?;
                self.cell_config(*bc, *n_per_unit).validate()?;
            }
        }
        if let Some(v) = &self.verify {
            self.validate_verify(v)?;
        }
        if let Some(f) = &self.field_dump {
            if f.t < 1 {
                return Err(bad("field_dump.t must be a positive integer"));
            }
        }
        Ok(())
    }

    fn validate_whom(&self, w: &WhomTask) -> Result<(), Failure> {
        check_sweep(&w.t_list, w.seeds)?;
        self.cell_config(w.bc, w.n_per_unit).validate()?;
        if let Some(l) = &w.xi_lattice {
            if !(l.half_width > 0.0 && l.half_width.is_finite()) || l.points < 2 {
                return Err(bad("whom.xi_lattice needs half_width > 0 and at least 2 points"));
            }
        }
        let xis = self.xi_list(w)?;
        if xis.is_empty() {
            return Err(bad("whom needs at least one ξ (xi or xi_lattice)"));
        }
        Ok(())
    }

    fn validate_verify(&self, v: &VerifyTask) -> Result<(), Failure> {
        if v.suites.is_empty() {
            return Err(bad("verify.suites is empty: select at least one suite"));
        }
        if v.t < 1 || v.duality_t < 1 {
            return Err(bad("verify window half-widths must be positive integers"));
        }
        self.cell_config(v.bc, v.n_per_unit).validate()?;
        if v.samples == 0 || v.realizations == 0 {
            return Err(bad("verify.samples and verify.realizations must be positive"));
        }
        if !(v.xi_scale > 0.0) || !(v.convexity_tol >= 0.0) || !(v.subadditivity_tol >= 0.0) {
            return Err(bad("verify scales and tolerances must be nonnegative"));
        }
        if v.suites.contains(&Suite::Truncation) {
            let d = self.dim() as f64;
            let q = self.truncation_q(v);
            let q_max = if self.dim() == 1 { f64::INFINITY } else { d / (d - 1.0) };
            if !(q > 1.0 && q < q_max) {
                return Err(bad(format!("verify.truncation_q = {q} outside (1, {q_max})")));
            }
            if v.truncation_levels.is_empty() || v.truncation_levels.windows(2).any(|w| w[1] <= w[0]) {
                return Err(bad("verify.truncation_levels must be nonempty and increasing"));
            }
        }
        if v.suites.contains(&Suite::Duality) {
            if self.dim() != 1 || self.integrand.rows != 1 {
                return Err(bad("the duality suite needs a scalar one-dimensional problem"));
            }
            if v.duality_points < 3 || !(v.duality_half_width > 0.0) {
                return Err(bad("verify.duality_points must be ≥ 3 with a positive half-width"));
            }
        }
        if v.suites.contains(&Suite::TableConvexity) && v.table.is_none() {
            return Err(bad("table_convexity needs verify.table"));
        }
        Ok(())
    }

    pub fn truncation_q(&self, v: &VerifyTask) -> f64 {
        v.truncation_q.unwrap_or_else(|| {
            if self.dim() == 1 {
                1.5
            } else {
                let d = self.dim() as f64;
                0.5 * (1.0 + d / (d - 1.0))
            }
        })
    }

    pub fn cell_config(&self, bc: Boundary, n_per_unit: usize) -> CellConfig {
        CellConfig {
            integrand: self.integrand.clone(),
            field: self.field.clone(),
            bc,
            n_per_unit,
            solver: self.solver.clone(),
        }
    }

    pub fn bvp_config(&self, b: &BvpTask) -> Result<BvpConfig, Failure> {
        Ok(BvpConfig {
            domain: b.domain.clone(),
            g: b.g.clone(),
            force: b.force.clone(),
            eps_list: b.eps_list.clone(),
            nodes_per_cell: b.nodes_per_cell,
            integrand: self.integrand.clone(),
            field: self.field.clone(),
            solver: self.solver.clone(),
            strict_convexity: b.strict_convexity,
            gap_threshold: b.gap_threshold,
            exponents: b.exponents,
        })
    }

    pub fn xi_list(&self, w: &WhomTask) -> Result<Vec<Mat>, Failure> {
        let (m, d) = (self.integrand.rows, self.integrand.cols);
        let mut out = Vec::new();
        for rows in &w.xi {
            let xi = matrix(rows)?;
            if xi.rows() != m || xi.cols() != d {
                return Err(bad(format!("whom.xi entries must be {m}x{d}, got {}x{}", xi.rows(), xi.cols())));
            }
            out.push(xi);
        }
        if let Some(l) = &w.xi_lattice {
            let axis: Vec<f64> = (0..l.points)
                .map(|i| -l.half_width + 2.0 * l.half_width * i as f64 / (l.points - 1) as f64)
                .collect();
            let table = WhomTable {
                rows: m,
                cols: d,
                axes: vec![axis; m * d],
                values: Vec::new(),
            };
            out.extend(table.grid());
        }
        Ok(out)
    }

    /// Seed of realization `k`: stable under changes to the rest of the job set.
    pub fn realization_seed(&self, k: u64) -> u64 {
        hash_seed(self.master_seed, &[k as i64])
    }

    pub fn seeds(&self, n: usize) -> Vec<u64> {
        (0..n as u64).map(|k| self.realization_seed(k)).collect()
    }

    /// Seed for auxiliary randomness (random `ξ`, trial draws) under a tag.
    pub fn aux_seed(&self, tag: i64, index: i64) -> u64 {
        hash_seed(self.master_seed, &[-1, tag, index])
    }
}

fn check_sweep(t_list: &[i64], seeds: usize) -> Result<(), Failure> {
    if t_list.is_empty() || t_list[0] < 1 || t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad("t_list must be nonempty, positive and strictly increasing"));
    }
    if seeds < 2 {
        return Err(bad("at least two realizations (seeds) are needed for error bars"));
    }
    Ok(())
}
