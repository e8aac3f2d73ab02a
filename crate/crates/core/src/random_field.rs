//! Stationary random coefficient fields on the integer lattice.
//!
//! The state of a cell `z` is a pure function of `(seed, z)`, computed by
//! counter-based hashing. Realizing a larger window therefore reproduces every
//! sub-window exactly, and cell problems on nested cubes all see one `ω`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::MaterialState;
use crate::matrix::pairwise_sum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Independent per unit cube.
    Checkerboard,
    /// Independent per unit slab `{z₁ = const}`; constant along `e₂..e_d`.
    Laminate,
    /// One draw for the whole space.
    Constant,
}

/// How cell values are assigned given the law.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrangement {
    /// Independent draws per cell.
    #[default]
    Iid,
    /// Cyclic assignment of the (equiprobable) outcomes of a discrete law by
    /// the cell's colour `Σ z_i` (checkerboard) or `z₁` (laminate), shifted by
    /// a seed-dependent offset. A randomly shifted periodic medium.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome {
    pub state: MaterialState,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CellLaw {
    Discrete(Vec<Outcome>),
    /// Independent uniform coefficient and exponent; a missing range keeps the default.
    Uniform {
        #[serde(default)]
        coeff: Option<[f64; 2]>,
        #[serde(default)]
        exponent: Option<[f64; 2]>,
    },
    /// Exponent `p = lo + (hi − lo)·U^shape`, concentrating near `lo > 1` for
    /// `shape > 1`; a truncated heavy tail towards linear growth.
    PowerLawExponent { lo: f64, hi: f64, shape: f64 },
}

impl CellLaw {
    /// Fair two-phase law over coefficients.
    pub fn two_phase(a: f64, b: f64) -> Self {
        CellLaw::Discrete(vec![
            Outcome {
                state: MaterialState::with_coeff(a),
                prob: 0.5,
            },
            Outcome {
                state: MaterialState::with_coeff(b),
                prob: 0.5,
            },
        ])
    }

    pub fn constant(state: MaterialState) -> Self {
        CellLaw::Discrete(vec![Outcome { state, prob: 1.0 }])
    }

    fn validate(&self) -> Result<()> {
        let state_ok = |s: &MaterialState| s.coeff >= 0.0 && s.coeff.is_finite() && s.exponent > 1.0 && s.exponent.is_finite();
        match self {
            CellLaw::Discrete(outcomes) => {
                if outcomes.is_empty() {
                    return Err(Error::param("discrete law needs at least one outcome"));
                }
                if outcomes.iter().any(|o| !(o.prob >= 0.0)) {
                    return Err(Error::param("probabilities must be nonnegative"));
                }
                let total: f64 = outcomes.iter().map(|o| o.prob).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::param(format!("probabilities sum to {total}, not 1")));
                }
                if let Some(o) = outcomes.iter().find(|o| !state_ok(&o.state)) {
                    return Err(Error::param(format!("invalid material state {:?}", o.state)));
                }
            }
            CellLaw::Uniform { coeff, exponent } => {
                if let Some([lo, hi]) = coeff {
                    if !(0.0 <= *lo && lo <= hi && hi.is_finite()) {
                        return Err(Error::param("coefficient range must satisfy 0 ≤ lo ≤ hi < ∞"));
                    }
                }
                if let Some([lo, hi]) = exponent {
                    if !(1.0 < *lo && lo <= hi && hi.is_finite()) {
                        return Err(Error::param("exponent range must satisfy 1 < lo ≤ hi < ∞"));
                    }
                }
            }
            CellLaw::PowerLawExponent { lo, hi, shape } => {
                if !(1.0 < *lo && lo <= hi && hi.is_finite() && *shape > 0.0) {
                    return Err(Error::param("power-law exponent needs 1 < lo ≤ hi < ∞ and shape > 0"));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, hash: u64) -> MaterialState {
        let u = |stream: u64| unit_interval(mix(hash ^ stream.wrapping_mul(0xA24B_AED4_963E_E407)));
        match self {
            CellLaw::Discrete(outcomes) => {
                let x = u(0);
                let mut acc = 0.0;
                for o in outcomes {
                    acc += o.prob;
                    if x < acc {
                        return o.state;
                    }
                }
                outcomes[outcomes.len() - 1].state
            }
            CellLaw::Uniform { coeff, exponent } => {
                let mut s = MaterialState::default();
                if let Some([lo, hi]) = coeff {
                    s.coeff = lo + (hi - lo) * u(0);
                }
                if let Some([lo, hi]) = exponent {
                    s.exponent = lo + (hi - lo) * u(1);
                }
                s
            }
            CellLaw::PowerLawExponent { lo, hi, shape } => {
                MaterialState::with_exponent(lo + (hi - lo) * u(0).powf(*shape))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub law: CellLaw,
    #[serde(default)]
    pub arrangement: Arrangement,
    pub dim: usize,
    /// Field cells per unit length; cells have side `1/cells_per_unit`.
    #[serde(default = "one")]
    pub cells_per_unit: usize,
}

fn one() -> usize {
    1
}

impl FieldSpec {
    pub fn new(kind: FieldKind, law: CellLaw, dim: usize) -> Result<Self> {
        let spec = FieldSpec {
            kind,
            law,
            arrangement: Arrangement::Iid,
            dim,
            cells_per_unit: 1,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn constant(state: MaterialState, dim: usize) -> Self {
        FieldSpec {
            kind: FieldKind::Constant,
            law: CellLaw::constant(state),
            arrangement: Arrangement::Iid,
            dim,
            cells_per_unit: 1,
        }
    }

    pub fn periodic(mut self) -> Result<Self> {
        self.arrangement = Arrangement::Periodic;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 3 {
            return Err(Error::param(format!("field dimension must be 1, 2 or 3, got {}", self.dim)));
        }
        if self.cells_per_unit == 0 {
            return Err(Error::param("cells_per_unit must be positive"));
        }
        self.law.validate()?;
        if self.arrangement == Arrangement::Periodic {
            match &self.law {
                CellLaw::Discrete(o) if o.iter().all(|x| (x.prob - 1.0 / o.len() as f64).abs() < 1e-12) => {}
                _ => {
                    return Err(Error::param(
                        "periodic arrangement needs a discrete law with equal probabilities",
                    ))
                }
            }
        }
        Ok(())
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stable 64-bit hash of a seed and a key, used for per-job seeds as well.
pub fn hash_seed(seed: u64, key: &[i64]) -> u64 {
    let mut h = mix(seed);
    for &k in key {
        h = mix(h ^ k as u64);
    }
    h
}

/// The state of lattice cell `z` (in cell units) for realization `seed`.
pub fn sample_cell_value(spec: &FieldSpec, z: &[i64], seed: u64) -> MaterialState {
    debug_assert_eq!(z.len(), spec.dim);
    match spec.arrangement {
        Arrangement::Iid => {
            let key: &[i64] = match spec.kind {
                FieldKind::Checkerboard => z,
                FieldKind::Laminate => &z[..1],
                FieldKind::Constant => &[],
            };
            spec.law.draw(hash_seed(seed, key))
        }
        Arrangement::Periodic => {
            let CellLaw::Discrete(outcomes) = &spec.law else {
                unreachable!("validated periodic law")
            };
            let n = outcomes.len() as i64;
            let colour = match spec.kind {
                FieldKind::Checkerboard => z.iter().sum::<i64>(),
                FieldKind::Laminate => z[0],
                FieldKind::Constant => 0,
            };
            let shift = (mix(seed) % n as u64) as i64;
            outcomes[(colour + shift).rem_euclid(n) as usize].state
        }
    }
}

/// Axis-aligned box with integer corners, in physical units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lower: Vec<i64>,
    pub upper: Vec<i64>,
}

impl Window {
    /// The cube `(−t, t)^d`.
    pub fn centered_cube(t: i64, d: usize) -> Self {
        Window {
            lower: vec![-t; d],
            upper: vec![t; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l) as f64).product()
    }

    fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::param("window corners must have equal positive dimension"));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| u <= l) {
            return Err(Error::param("window must have positive volume"));
        }
        Ok(())
    }
}

/// States of every field cell in a window.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldRealization {
    pub spec: FieldSpec,
    pub window: Window,
    pub seed: u64,
    counts: Vec<usize>,
    states: Vec<MaterialState>,
}

pub fn realize_window(spec: &FieldSpec, window: &Window, seed: u64) -> Result<FieldRealization> {
    spec.validate()?;
    window.validate()?;
    if window.dim() != spec.dim {
        return Err(Error::param(format!(
            "window dimension {} does not match field dimension {}",
            window.dim(),
            spec.dim
        )));
    }
    let cpu = spec.cells_per_unit as i64;
    let counts: Vec<usize> = window
        .lower
        .iter()
        .zip(&window.upper)
        .map(|(l, u)| ((u - l) * cpu) as usize)
        .collect();
    let total: usize = counts.iter().product();
    let mut states = Vec::with_capacity(total);
    let mut z = vec![0i64; spec.dim];
    for linear in 0..total {
        let mut rem = linear;
        for k in (0..spec.dim).rev() {
            z[k] = window.lower[k] * cpu + (rem % counts[k]) as i64;
            rem /= counts[k];
        }
        states.push(sample_cell_value(spec, &z, seed));
    }
    Ok(FieldRealization {
        spec: spec.clone(),
        window: window.clone(),
        seed,
        counts,
        states,
    })
}

impl FieldRealization {
    /// Cells per axis.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// States in row-major order, last axis fastest.
    pub fn states(&self) -> &[MaterialState] {
        &self.states
    }

    /// State of cell `z` (cell units), if inside the window.
    pub fn cell(&self, z: &[i64]) -> Option<MaterialState> {
        let cpu = self.spec.cells_per_unit as i64;
        let mut linear = 0usize;
        for k in 0..self.spec.dim {
            let off = z[k] - self.window.lower[k] * cpu;
            if off < 0 || off >= self.counts[k] as i64 {
                return None;
            }
            linear = linear * self.counts[k] + off as usize;
        }
        Some(self.states[linear])
    }

    /// State at physical point `x`; cells are half-open `[z, z+1)/cells_per_unit`.
    pub fn state_at(&self, x: &[f64]) -> Result<MaterialState> {
        let cpu = self.spec.cells_per_unit as f64;
        let z: Vec<i64> = x.iter().map(|&v| (v * cpu).floor() as i64).collect();
        self.cell(&z)
            .ok_or_else(|| Error::Window(format!("point {x:?} outside window {:?}", self.window)))
    }

    /// Writes `<prefix>.bin` (little-endian `f64` pairs `coeff, exponent` per
    /// cell, last axis fastest) and `<prefix>.json` (header).
    pub fn write_dump(&self, prefix: &Path) -> Result<()> {
        let header = DumpHeader {
            window: self.window.clone(),
            cells_per_unit: self.spec.cells_per_unit,
            seed: self.seed,
            counts: self.counts.clone(),
            layout: "row-major, last axis fastest; per cell f64 LE coeff, exponent".to_string(),
            spec: self.spec.clone(),
        };
        let mut w = BufWriter::new(File::create(prefix.with_extension("bin"))?);
        for s in &self.states {
            w.write_all(&s.coeff.to_le_bytes())?;
            w.write_all(&s.exponent.to_le_bytes())?;
        }
        w.flush()?;
        let json = serde_json::to_string_pretty(&header)?;
        std::fs::write(prefix.with_extension("json"), json + "\n")?;
        Ok(())
    }

    pub fn read_dump(prefix: &Path) -> Result<Self> {
        let header: DumpHeader = serde_json::from_str(&std::fs::read_to_string(prefix.with_extension("json"))?)?;
        let total: usize = header.counts.iter().product();
        let mut bytes = Vec::with_capacity(total * 16);
        BufReader::new(File::open(prefix.with_extension("bin"))?).read_to_end(&mut bytes)?;
        if bytes.len() != total * 16 {
            return Err(Error::param(format!("dump holds {} bytes, expected {}", bytes.len(), total * 16)));
        }
        let f = |c: &[u8]| f64::from_le_bytes(c.try_into().expect("8 bytes"));
        let states = bytes
            .chunks_exact(16)
            .map(|c| MaterialState {
                coeff: f(&c[..8]),
                exponent: f(&c[8..]),
            })
            .collect();
        Ok(FieldRealization {
            spec: header.spec,
            window: header.window,
            seed: header.seed,
            counts: header.counts,
            states,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    window: Window,
    cells_per_unit: usize,
    seed: u64,
    counts: Vec<usize>,
    layout: String,
    spec: FieldSpec,
}

/// Averages of `observable` over the cells of `(−t, t)^d` for each `t`.
pub fn ergodic_average<F>(spec: &FieldSpec, observable: F, t_list: &[i64], seed: u64) -> Result<Vec<(i64, f64)>>
where
    F: Fn(&MaterialState) -> f64,
{
    t_list
        .iter()
        .map(|&t| {
            let real = realize_window(spec, &Window::centered_cube(t, spec.dim), seed)?;
            let vals: Vec<f64> = real.states.iter().map(&observable).collect();
            Ok((t, pairwise_sum(&vals) / vals.len() as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fair(kind: FieldKind, d: usize) -> FieldSpec {
        FieldSpec::new(kind, CellLaw::two_phase(1.0, 4.0), d).unwrap()
    }

    #[test]
    fn constant_field() {
        let s = MaterialState::with_coeff(3.0);
        let spec = FieldSpec::constant(s, 2);
        for z in [[0, 0], [5, -7], [100, 3]] {
            assert_eq!(sample_cell_value(&spec, &z, 9), s);
        }
        let avg = ergodic_average(&spec, |s| s.coeff, &[1, 4, 16], 1).unwrap();
        assert!(avg.iter().all(|&(_, a)| a == 3.0));
    }

    #[test]
    fn deterministic_in_seed_and_cell() {
        let spec = fair(FieldKind::Checkerboard, 2);
        assert_eq!(sample_cell_value(&spec, &[0, 0], 7), sample_cell_value(&spec, &[0, 0], 7));
        let differs = (0..64).any(|i| sample_cell_value(&spec, &[i, 0], 7) != sample_cell_value(&spec, &[i, 0], 8));
        assert!(differs);
    }

    #[test]
    fn million_cell_mean() {
        let spec = fair(FieldKind::Checkerboard, 1);
        let n = 1_000_000;
        let sum: f64 = (0..n).map(|i| sample_cell_value(&spec, &[i], 42).coeff).sum();
        assert!((sum / n as f64 - 2.5).abs() < 0.01);
    }

    #[test]
    fn unit_window_and_nesting() {
        let spec = fair(FieldKind::Checkerboard, 2);
        let w1 = Window { lower: vec![0, 0], upper: vec![1, 1] };
        let r1 = realize_window(&spec, &w1, 3).unwrap();
        assert_eq!(r1.states().len(), 1);
        assert_eq!(r1.states()[0], sample_cell_value(&spec, &[0, 0], 3));
        let r2 = realize_window(&spec, &Window { lower: vec![0, 0], upper: vec![2, 2] }, 3).unwrap();
        assert_eq!(r2.cell(&[0, 0]), Some(r1.states()[0]));
        let big = realize_window(&spec, &Window::centered_cube(8, 2), 3).unwrap();
        let small = realize_window(&spec, &Window::centered_cube(3, 2), 3).unwrap();
        for i in -3..3 {
            for j in -3..3 {
                assert_eq!(big.cell(&[i, j]), small.cell(&[i, j]));
            }
        }
    }

    #[test]
    fn laminate_is_constant_across_slabs() {
        let spec = fair(FieldKind::Laminate, 3);
        let r = realize_window(&spec, &Window::centered_cube(4, 3), 11).unwrap();
        for i in -4..4 {
            let s = r.cell(&[i, -4, -4]).unwrap();
            for j in -4..4 {
                for k in -4..4 {
                    assert_eq!(r.cell(&[i, j, k]), Some(s));
                }
            }
        }
    }

    #[test]
    fn periodic_laminate_alternates() {
        let spec = fair(FieldKind::Laminate, 2).periodic().unwrap();
        let r = realize_window(&spec, &Window::centered_cube(4, 2), 5).unwrap();
        for i in -4..3 {
            assert_ne!(r.cell(&[i, 0]), r.cell(&[i + 1, 0]));
            assert_eq!(r.cell(&[i, 0]), r.cell(&[i, 3]));
        }
        let uneven = FieldSpec::new(
            FieldKind::Laminate,
            CellLaw::Discrete(vec![
                Outcome { state: MaterialState::with_coeff(1.0), prob: 0.3 },
                Outcome { state: MaterialState::with_coeff(2.0), prob: 0.7 },
            ]),
            2,
        )
        .unwrap();
        assert!(uneven.periodic().is_err());
    }

    #[test]
    fn state_lookup_and_window_error() {
        let mut spec = fair(FieldKind::Checkerboard, 1);
        spec.cells_per_unit = 4;
        let r = realize_window(&spec, &Window::centered_cube(1, 1), 2).unwrap();
        assert_eq!(r.counts(), &[8]);
        assert_eq!(r.state_at(&[0.3]).unwrap(), sample_cell_value(&spec, &[1], 2));
        assert_eq!(r.state_at(&[-0.01]).unwrap(), sample_cell_value(&spec, &[-1], 2));
        assert!(matches!(r.state_at(&[1.0]), Err(Error::Window(_))));
    }

    #[test]
    fn invalid_specs() {
        let bad = CellLaw::Discrete(vec![Outcome { state: MaterialState::default(), prob: 0.5 }]);
        assert!(FieldSpec::new(FieldKind::Checkerboard, bad, 1).is_err());
        let bad = CellLaw::Uniform { coeff: Some([-1.0, 1.0]), exponent: None };
        assert!(FieldSpec::new(FieldKind::Checkerboard, bad, 1).is_err());
        let spec = fair(FieldKind::Checkerboard, 2);
        assert!(realize_window(&spec, &Window { lower: vec![0, 0], upper: vec![0, 1] }, 0).is_err());
    }

    #[test]
    fn power_law_stays_in_range() {
        let spec = FieldSpec::new(
            FieldKind::Checkerboard,
            CellLaw::PowerLawExponent { lo: 1.05, hi: 3.0, shape: 4.0 },
            1,
        )
        .unwrap();
        let ps: Vec<f64> = (0..10_000).map(|i| sample_cell_value(&spec, &[i], 1).exponent).collect();
        assert!(ps.iter().all(|&p| (1.05..=3.0).contains(&p)));
        let near = ps.iter().filter(|&&p| p < 1.2).count();
        assert!(near > 4000, "{near}");
    }

    #[test]
    fn dump_round_trip() {
        let dir = std::env::temp_dir().join(format!("stochhom-dump-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let spec = fair(FieldKind::Checkerboard, 2);
        let r = realize_window(&spec, &Window::centered_cube(3, 2), 17).unwrap();
        let prefix = dir.join("field");
        r.write_dump(&prefix).unwrap();
        let back = FieldRealization::read_dump(&prefix).unwrap();
        assert_eq!(back, r);
        std::fs::remove_dir_all(&dir).ok();
    }
}
