//! Structured simplicial meshes, piecewise-affine fields and energy assembly.
//!
//! Every grid cube of side `h = 1/n_per_unit` is split into the `d!` Kuhn
//! simplices `{y_{π1} ≥ … ≥ y_{πd}}`. Along the vertex path
//! `v_j = v_{j−1} + h e_{π(j)}` the gradient of a P1 function is simply
//! `∂_{π(j)} u = (u(v_j) − u(v_{j−1}))/h`, so no element Jacobians are stored.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrand::{Integrand, MaterialState};
use crate::matrix::{pairwise_sum, Mat};
use crate::random_field::FieldRealization;

/// Elements above which assembly fans out over threads.
const PARALLEL_ELEMENTS: usize = 4096;
const MAX_LOCAL: usize = 64;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        BoxDomain { lower, upper }
    }

    pub fn unit(d: usize) -> Self {
        BoxDomain::new(vec![0.0; d], vec![1.0; d])
    }

    pub fn cube(half_width: f64, d: usize) -> Self {
        BoxDomain::new(vec![-half_width; d], vec![half_width; d])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    domain: BoxDomain,
    n_per_unit: usize,
    h: f64,
    cells: Vec<usize>,
    /// `d + 1` vertex indices per element, in path order.
    elements: Vec<usize>,
    /// `d` axis indices per element: the permutation `π`.
    perms: Vec<u8>,
    volume: f64,
}

pub fn build_mesh(domain: &BoxDomain, n_per_unit: usize) -> Result<Mesh> {
    let d = domain.dim();
    if d == 0 || d > 3 || domain.upper.len() != d {
        return Err(Error::param("mesh dimension must be 1, 2 or 3"));
    }
    if n_per_unit == 0 {
        return Err(Error::param("n_per_unit must be at least 1"));
    }
    let mut cells = Vec::with_capacity(d);
    for (l, u) in domain.lower.iter().zip(&domain.upper) {
        let len = u - l;
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::param(format!("degenerate box side [{l}, {u}]")));
        }
        let n = len * n_per_unit as f64;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::param(format!(
                "box side {len} is not a multiple of the mesh size 1/{n_per_unit}"
            )));
        }
        cells.push(n.round() as usize);
    }
    let h = 1.0 / n_per_unit as f64;
    let perms_all = permutations(d);
    let strides = strides(&cells.iter().map(|c| c + 1).collect::<Vec<_>>());
    let n_cubes: usize = cells.iter().product();
    let mut elements = Vec::with_capacity(n_cubes * perms_all.len() * (d + 1));
    let mut perms = Vec::with_capacity(n_cubes * perms_all.len() * d);
    let mut idx = vec![0usize; d];
    for cube in 0..n_cubes {
        let mut rem = cube;
        for k in (0..d).rev() {
            idx[k] = rem % cells[k];
            rem /= cells[k];
        }
        let corner: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        for perm in &perms_all {
            let mut v = corner;
            elements.push(v);
            for &axis in perm {
                v += strides[axis];
                elements.push(v);
                perms.push(axis as u8);
            }
        }
    }
    let volume = h.powi(d as i32) / (1..=d).product::<usize>() as f64;
    Ok(Mesh {
        domain: domain.clone(),
        n_per_unit,
        h,
        cells,
        elements,
        perms,
        volume,
    })
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            prefix.push(x);
            rec(prefix, rest, out);
            prefix.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..d).collect(), &mut out);
    out
}

fn strides(counts: &[usize]) -> Vec<usize> {
    let mut s = vec![1; counts.len()];
    for k in (0..counts.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * counts[k + 1];
    }
    s
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn n_per_unit(&self) -> usize {
        self.n_per_unit
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Grid cubes per axis.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn n_nodes(&self) -> usize {
        self.cells.iter().map(|c| c + 1).product()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim() + 1)
    }

    pub fn element_volume(&self) -> f64 {
        self.volume
    }

    pub fn element(&self, e: usize) -> (&[usize], &[u8]) {
        let d = self.dim();
        (&self.elements[e * (d + 1)..(e + 1) * (d + 1)], &self.perms[e * d..(e + 1) * d])
    }

    /// Grid multi-index of a node.
    pub fn node_index(&self, node: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = vec![0; d];
        let mut rem = node;
        for k in (0..d).rev() {
            idx[k] = rem % (self.cells[k] + 1);
            rem /= self.cells[k] + 1;
        }
        idx
    }

    pub fn node_at(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.cells)
            .fold(0, |acc, (&i, &c)| acc * (c + 1) + i)
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        self.node_index(node)
            .iter()
            .zip(&self.domain.lower)
            .map(|(&i, &l)| l + i as f64 * self.h)
            .collect()
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        self.node_index(node)
            .iter()
            .zip(&self.cells)
            .any(|(&i, &c)| i == 0 || i == c)
    }

    pub fn barycenter(&self, e: usize) -> Vec<f64> {
        let (verts, _) = self.element(e);
        let d = self.dim();
        let mut b = vec![0.0; d];
        for &v in verts {
            for (bk, xk) in b.iter_mut().zip(self.node_coords(v)) {
                *bk += xk;
            }
        }
        b.iter_mut().for_each(|x| *x /= (d + 1) as f64);
        b
    }

    /// Trapezoidal (mass-lumped) nodal weights, `Σ_e vol_e/(d+1)` per vertex.
    pub fn lumped_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_nodes()];
        let share = self.volume / (self.dim() + 1) as f64;
        for &v in &self.elements {
            w[v] += share;
        }
        w
    }

    /// Value of the P1 interpolant of `u` at `x` (clamped into the box).
    pub fn interpolate(&self, u: &DiscreteField, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let strides = strides(&self.cells.iter().map(|c| c + 1).collect::<Vec<_>>());
        let mut corner = 0;
        let mut y = vec![0.0; d];
        for k in 0..d {
            let s = ((x[k] - self.domain.lower[k]) / self.h).clamp(0.0, self.cells[k] as f64);
            let c = (s.floor() as usize).min(self.cells[k] - 1);
            y[k] = s - c as f64;
            corner += c * strides[k];
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| y[b].total_cmp(&y[a]));
        let m = u.m;
        let mut out = vec![0.0; m];
        let mut node = corner;
        let mut weight = 1.0 - y[order[0]];
        for c in 0..m {
            out[c] += weight * u.values[node * m + c];
        }
        for j in 0..d {
            node += strides[order[j]];
            weight = y[order[j]] - if j + 1 < d { y[order[j + 1]] } else { 0.0 };
            for c in 0..m {
                out[c] += weight * u.values[node * m + c];
            }
        }
        out
    }
}

/// Nodal values of an `R^m`-valued P1 function.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteField {
    pub m: usize,
    /// `m` values per node.
    pub values: Vec<f64>,
    /// Nodes whose values are prescribed.
    pub constrained: Vec<bool>,
}

impl DiscreteField {
    pub fn zeros(mesh: &Mesh, m: usize) -> Self {
        DiscreteField {
            m,
            values: vec![0.0; mesh.n_nodes() * m],
            constrained: vec![false; mesh.n_nodes()],
        }
    }

    pub fn from_fn(mesh: &Mesh, m: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut u = Self::zeros(mesh, m);
        for node in 0..mesh.n_nodes() {
            let v = f(&mesh.node_coords(node));
            u.values[node * m..(node + 1) * m].copy_from_slice(&v[..m]);
        }
        u
    }

    /// Nodal values of `x ↦ ξ x + b`.
    pub fn affine(mesh: &Mesh, xi: &Mat, b: &[f64]) -> Self {
        Self::from_fn(mesh, xi.rows(), |x| {
            xi.apply(x).iter().zip(b).map(|(v, c)| v + c).collect()
        })
    }

    /// Marks every boundary node as constrained at its current value.
    pub fn constrain_boundary(mut self, mesh: &Mesh) -> Self {
        for node in 0..mesh.n_nodes() {
            self.constrained[node] = mesh.is_boundary_node(node);
        }
        self
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn n_nodes(&self) -> usize {
        self.constrained.len()
    }

    /// Per-element gradients `∇u|_e` as `m × d` matrices.
    pub fn gradients(&self, mesh: &Mesh) -> Vec<Mat> {
        gradient(mesh, self)
    }

    pub fn write_csv(&self, mesh: &Mesh, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let d = mesh.dim();
        let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        header.extend((0..self.m).map(|c| format!("u{c}")));
        writeln!(out, "{}", header.join(","))?;
        for node in 0..self.n_nodes() {
            let row: Vec<String> = mesh
                .node_coords(node)
                .iter()
                .chain(self.node(node))
                .map(|v| format!("{v:.17e}"))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Node values as little-endian `f64`, `m` per node.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

/// Exact per-element gradients of the P1 interpolant.
pub fn gradient(mesh: &Mesh, u: &DiscreteField) -> Vec<Mat> {
    let (d, m, h) = (mesh.dim(), u.m, mesh.h);
    (0..mesh.n_elements())
        .map(|e| {
            let (verts, perm) = mesh.element(e);
            let mut g = Mat::zeros(m, d);
            for c in 0..m {
                for j in 1..=d {
                    let du = u.values[verts[j] * m + c] - u.values[verts[j - 1] * m + c];
                    g.set(c, perm[j - 1] as usize, du / h);
                }
            }
            g
        })
        .collect()
}

/// Re-interpolates `u` from `coarse` onto `fine` (exact for nested meshes).
pub fn prolongate(coarse: &Mesh, u: &DiscreteField, fine: &Mesh) -> DiscreteField {
    let mut out = DiscreteField::from_fn(fine, u.m, |x| coarse.interpolate(u, x));
    for node in 0..fine.n_nodes() {
        out.constrained[node] = fine.is_boundary_node(node) && u.constrained.iter().any(|&c| c);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Boundary nodes keep the values of the initial field.
    Dirichlet,
    /// Opposite faces are identified.
    Periodic,
}

/// Free degrees of freedom: which node maps to which unknown.
#[derive(Clone, Debug)]
struct DofMap {
    node_dof: Vec<Option<usize>>,
    n_free: usize,
}

impl DofMap {
    fn new(mesh: &Mesh, boundary: Boundary) -> Self {
        let n = mesh.n_nodes();
        let mut node_dof = vec![None; n];
        match boundary {
            Boundary::Dirichlet => {
                let mut next = 0;
                for (node, slot) in node_dof.iter_mut().enumerate() {
                    if !mesh.is_boundary_node(node) {
                        *slot = Some(next);
                        next += 1;
                    }
                }
                DofMap { node_dof, n_free: next }
            }
            Boundary::Periodic => {
                let cells = mesh.cells();
                let wrapped_counts: Vec<usize> = cells.to_vec();
                let wstrides = strides(&wrapped_counts);
                for (node, slot) in node_dof.iter_mut().enumerate() {
                    let idx = mesh.node_index(node);
                    let dof: usize = idx
                        .iter()
                        .zip(cells)
                        .zip(&wstrides)
                        .map(|((&i, &c), &s)| (i % c) * s)
                        .sum();
                    *slot = Some(dof);
                }
                DofMap {
                    node_dof,
                    n_free: cells.iter().product(),
                }
            }
        }
    }
}

/// A discrete energy `u ↦ Σ_e vol_e W(s_e, ξ + ∇u|_e) − Σ_i w_i f_i·u_i`.
#[derive(Clone)]
pub struct EnergyProblem {
    pub mesh: Arc<Mesh>,
    pub states: Arc<Vec<MaterialState>>,
    pub integrand: Arc<dyn Integrand>,
    pub xi: Mat,
    pub force: Option<Arc<Vec<f64>>>,
    pub boundary: Boundary,
    lumped: Arc<Vec<f64>>,
    dofs: Arc<DofMap>,
}

impl std::fmt::Debug for EnergyProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnergyProblem")
            .field("elements", &self.mesh.n_elements())
            .field("xi", &self.xi)
            .field("boundary", &self.boundary)
            .field("force", &self.force.is_some())
            .finish()
    }
}

impl EnergyProblem {
    /// Looks up the coefficient state of every element at `barycenter/ε`.
    pub fn new(
        mesh: Arc<Mesh>,
        realization: &FieldRealization,
        eps: f64,
        integrand: Arc<dyn Integrand>,
        xi: Mat,
        boundary: Boundary,
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::param("ε must be positive"));
        }
        let states = (0..mesh.n_elements())
            .map(|e| {
                let y: Vec<f64> = mesh.barycenter(e).iter().map(|x| x / eps).collect();
                realization.state_at(&y)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_states(mesh, states, integrand, xi, boundary)
    }

    /// Same state in every element.
    pub fn uniform(mesh: Arc<Mesh>, state: MaterialState, integrand: Arc<dyn Integrand>, xi: Mat, boundary: Boundary) -> Result<Self> {
        let states = vec![state; mesh.n_elements()];
        Self::with_states(mesh, states, integrand, xi, boundary)
    }

    pub fn with_states(
        mesh: Arc<Mesh>,
        states: Vec<MaterialState>,
        integrand: Arc<dyn Integrand>,
        xi: Mat,
        boundary: Boundary,
    ) -> Result<Self> {
        if xi.cols() != mesh.dim() {
            return Err(Error::Shape {
                expected: format!("m x {}", mesh.dim()),
                got: format!("{}x{}", xi.rows(), xi.cols()),
            });
        }
        if xi.len() > MAX_LOCAL {
            return Err(Error::param("m·d too large for assembly"));
        }
        if states.len() != mesh.n_elements() {
            return Err(Error::param("one state per element required"));
        }
        let mut checked: Vec<MaterialState> = Vec::new();
        for s in &states {
            if !checked.contains(s) {
                integrand.validate_state(s)?;
                if checked.len() < 64 {
                    checked.push(*s);
                }
            }
        }
        let lumped = Arc::new(mesh.lumped_weights());
        let dofs = Arc::new(DofMap::new(&mesh, boundary));
        Ok(EnergyProblem {
            mesh,
            states: Arc::new(states),
            integrand,
            xi,
            force: None,
            boundary,
            lumped,
            dofs,
        })
    }

    /// Nodal force, `m` values per node.
    pub fn with_force(mut self, force: Vec<f64>) -> Result<Self> {
        if force.len() != self.mesh.n_nodes() * self.m() {
            return Err(Error::param("force needs m values per node"));
        }
        self.force = Some(Arc::new(force));
        Ok(self)
    }

    pub fn without_force(&self) -> Self {
        EnergyProblem {
            force: None,
            ..self.clone()
        }
    }

    pub fn with_integrand(&self, integrand: Arc<dyn Integrand>) -> Self {
        EnergyProblem {
            integrand,
            ..self.clone()
        }
    }

    pub fn with_xi(&self, xi: Mat) -> Self {
        assert_eq!((xi.rows(), xi.cols()), (self.xi.rows(), self.xi.cols()));
        EnergyProblem { xi, ..self.clone() }
    }

    pub fn m(&self) -> usize {
        self.xi.rows()
    }

    pub fn n_free(&self) -> usize {
        self.dofs.n_free * self.m()
    }

    /// `Σ_e vol_e W(s_e, ξ)`: the energy of `u = 0`, i.e. of the affine map `ξx`.
    pub fn affine_energy(&self) -> f64 {
        let vals: Vec<f64> = self
            .states
            .iter()
            .map(|s| self.mesh.element_volume() * self.integrand.value(s, self.xi.as_slice()))
            .collect();
        pairwise_sum(&vals)
    }

    /// Checks the shape of `u` and that periodic images agree.
    pub fn check_field(&self, u: &DiscreteField) -> Result<()> {
        if u.m != self.m() || u.n_nodes() != self.mesh.n_nodes() {
            return Err(Error::Shape {
                expected: format!("{} nodes x {}", self.mesh.n_nodes(), self.m()),
                got: format!("{} nodes x {}", u.n_nodes(), u.m),
            });
        }
        Ok(())
    }

    /// Free unknowns of `u`.
    pub fn gather(&self, u: &DiscreteField) -> Vec<f64> {
        let m = self.m();
        let mut x = vec![0.0; self.n_free()];
        for (node, dof) in self.dofs.node_dof.iter().enumerate() {
            if let Some(dof) = dof {
                x[dof * m..(dof + 1) * m].copy_from_slice(u.node(node));
            }
        }
        x
    }

    /// Writes free unknowns back into `u`; constrained values are untouched.
    pub fn scatter(&self, x: &[f64], u: &mut DiscreteField) {
        let m = self.m();
        for (node, dof) in self.dofs.node_dof.iter().enumerate() {
            if let Some(dof) = dof {
                u.values[node * m..(node + 1) * m].copy_from_slice(&x[dof * m..(dof + 1) * m]);
            }
        }
        if self.boundary == Boundary::Dirichlet {
            for node in 0..self.mesh.n_nodes() {
                u.constrained[node] = self.dofs.node_dof[node].is_none();
            }
        }
    }

    /// Energy and, if requested, per-node partial derivatives (`m` per node).
    fn assemble(&self, u: &[f64], want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let mesh = &*self.mesh;
        let (d, m) = (mesh.dim(), self.m());
        let h = mesh.h;
        let vol = mesh.element_volume();
        let xi = self.xi.as_slice();
        let local_len = m * (d + 1);

        let element = |e: usize, local: &mut [f64]| -> f64 {
            let (verts, perm) = mesh.element(e);
            let mut grad_u = [0.0; MAX_LOCAL];
            let mut dw = [0.0; MAX_LOCAL];
            let gu = &mut grad_u[..m * d];
            for c in 0..m {
                for j in 1..=d {
                    let k = perm[j - 1] as usize;
                    gu[c * d + k] = xi[c * d + k] + (u[verts[j] * m + c] - u[verts[j - 1] * m + c]) / h;
                }
            }
            let state = &self.states[e];
            if !want_grad {
                return vol * self.integrand.value(state, gu);
            }
            let w = self.integrand.value_and_gradient(state, gu, &mut dw[..m * d]);
            local.fill(0.0);
            for c in 0..m {
                for j in 1..=d {
                    let k = perm[j - 1] as usize;
                    let t = vol * dw[c * d + k] / h;
                    local[j * m + c] += t;
                    local[(j - 1) * m + c] -= t;
                }
            }
            vol * w
        };

        let n_el = mesh.n_elements();
        let mut locals = if want_grad { vec![0.0; n_el * local_len] } else { Vec::new() };
        let values: Vec<f64> = if n_el >= PARALLEL_ELEMENTS {
            if want_grad {
                locals
                    .par_chunks_mut(local_len)
                    .enumerate()
                    .map(|(e, loc)| element(e, loc))
                    .collect()
            } else {
                (0..n_el).into_par_iter().map(|e| element(e, &mut [])).collect()
            }
        } else if want_grad {
            locals
                .chunks_mut(local_len)
                .enumerate()
                .map(|(e, loc)| element(e, loc))
                .collect()
        } else {
            (0..n_el).map(|e| element(e, &mut [])).collect()
        };
        let mut energy = pairwise_sum(&values);

        if let Some(f) = &self.force {
            let pair: Vec<f64> = (0..mesh.n_nodes())
                .map(|node| {
                    let w = self.lumped[node];
                    (0..m).map(|c| w * f[node * m + c] * u[node * m + c]).sum::<f64>()
                })
                .collect();
            energy -= pairwise_sum(&pair);
        }

        if !want_grad {
            return (energy, None);
        }
        let mut grad = vec![0.0; u.len()];
        for e in 0..n_el {
            let (verts, _) = mesh.element(e);
            let loc = &locals[e * local_len..(e + 1) * local_len];
            for (j, &v) in verts.iter().enumerate() {
                for c in 0..m {
                    grad[v * m + c] += loc[j * m + c];
                }
            }
        }
        if let Some(f) = &self.force {
            for node in 0..mesh.n_nodes() {
                for c in 0..m {
                    grad[node * m + c] -= self.lumped[node] * f[node * m + c];
                }
            }
        }
        (energy, Some(grad))
    }

    /// Per-node Jacobi diagonal `Σ_e vol_e κ_e |∇φ_i|²`, with `κ_e` the
    /// integrand's curvature at the element gradient.
    fn curvature_diagonal(&self, u: &[f64]) -> Vec<f64> {
        let mesh = &*self.mesh;
        let (d, m) = (mesh.dim(), self.m());
        let h = mesh.h;
        let scale = mesh.element_volume() / (h * h);
        let xi = self.xi.as_slice();
        let kappa = |e: usize| -> f64 {
            let (verts, perm) = mesh.element(e);
            let mut gu = [0.0; MAX_LOCAL];
            for c in 0..m {
                for j in 1..=d {
                    let k = perm[j - 1] as usize;
                    gu[c * d + k] = xi[c * d + k] + (u[verts[j] * m + c] - u[verts[j - 1] * m + c]) / h;
                }
            }
            scale * self.integrand.curvature(&self.states[e], &gu[..m * d])
        };
        let n_el = mesh.n_elements();
        let kappas: Vec<f64> = if n_el >= PARALLEL_ELEMENTS {
            (0..n_el).into_par_iter().map(kappa).collect()
        } else {
            (0..n_el).map(kappa).collect()
        };
        let mut diag = vec![0.0; mesh.n_nodes()];
        for (e, k) in kappas.iter().enumerate() {
            let (verts, _) = mesh.element(e);
            for j in 1..=d {
                diag[verts[j]] += k;
                diag[verts[j - 1]] += k;
            }
        }
        diag
    }

    /// A closure-friendly view over the free unknowns with the constrained
    /// values taken from `template`.
    pub fn objective<'a>(&'a self, template: &DiscreteField) -> Objective<'a> {
        Objective {
            problem: self,
            full: template.values.clone(),
        }
    }
}

/// The energy as a function of the free unknowns.
pub struct Objective<'a> {
    problem: &'a EnergyProblem,
    full: Vec<f64>,
}

impl Objective<'_> {
    pub fn dim(&self) -> usize {
        self.problem.n_free()
    }

    fn load(&mut self, x: &[f64]) {
        let m = self.problem.m();
        for (node, dof) in self.problem.dofs.node_dof.iter().enumerate() {
            if let Some(dof) = dof {
                self.full[node * m..(node + 1) * m].copy_from_slice(&x[dof * m..(dof + 1) * m]);
            }
        }
    }

    pub fn value(&mut self, x: &[f64]) -> f64 {
        self.load(x);
        self.problem.assemble(&self.full, false).0
    }

    /// Jacobi diagonal of the Hessian over the free unknowns at `x`.
    pub fn curvature_diagonal(&mut self, x: &[f64]) -> Vec<f64> {
        self.load(x);
        let node_diag = self.problem.curvature_diagonal(&self.full);
        let m = self.problem.m();
        let mut out = vec![0.0; x.len()];
        for (node, dof) in self.problem.dofs.node_dof.iter().enumerate() {
            if let Some(dof) = dof {
                for c in 0..m {
                    out[dof * m + c] += node_diag[node];
                }
            }
        }
        out
    }

    /// Energy and gradient with respect to the free unknowns.
    pub fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.load(x);
        let (e, node_grad) = self.problem.assemble(&self.full, true);
        let node_grad = node_grad.expect("gradient requested");
        let m = self.problem.m();
        grad.fill(0.0);
        for (node, dof) in self.problem.dofs.node_dof.iter().enumerate() {
            if let Some(dof) = dof {
                for c in 0..m {
                    grad[dof * m + c] += node_grad[node * m + c];
                }
            }
        }
        e
    }
}

pub fn assemble_energy(problem: &EnergyProblem, u: &DiscreteField) -> Result<f64> {
    problem.check_field(u)?;
    Ok(problem.assemble(&u.values, false).0)
}

/// Per-node partial derivatives of the energy; constrained nodes are zeroed.
pub fn assemble_energy_gradient(problem: &EnergyProblem, u: &DiscreteField) -> Result<Vec<f64>> {
    problem.check_field(u)?;
    let mut g = problem.assemble(&u.values, true).1.expect("gradient requested");
    let m = problem.m();
    for (node, dof) in problem.dofs.node_dof.iter().enumerate() {
        if dof.is_none() {
            g[node * m..(node + 1) * m].fill(0.0);
        }
    }
    Ok(g)
}
