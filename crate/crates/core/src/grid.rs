//! Uniform meshes on the unit interval and unit square, the uniform time axis,
//! and the discrete calculus shared by every other module.
//!
//! All spatial operators are assembled as sparse rows ([`SparseOp`]) so the same
//! stencil can act on plain fields and on log-scaled fields.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::logspace::{ScaledField, ScaledValue};

pub type ScalarField = Vec<f64>;

/// One side of the unit interval (West/East) or the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    #[serde(alias = "left")]
    West,
    #[serde(alias = "right")]
    East,
    South,
    North,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::West, Face::East, Face::South, Face::North];

    pub fn axis(self) -> usize {
        match self {
            Face::West | Face::East => 0,
            Face::South | Face::North => 1,
        }
    }

    /// True for the face at coordinate 1 along its axis.
    pub fn is_high(self) -> bool {
        matches!(self, Face::East | Face::North)
    }

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Face::West => [-1.0, 0.0],
            Face::East => [1.0, 0.0],
            Face::South => [0.0, -1.0],
            Face::North => [0.0, 1.0],
        }
    }
}

/// Per-node vector field, one component vector per spatial axis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(dim: usize, len: usize) -> Self {
        VectorField {
            comps: vec![vec![0.0; len]; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn len(&self) -> usize {
        self.comps.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pointwise `|v|^2`.
    pub fn sq_norm(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for comp in &self.comps {
            for (o, v) in out.iter_mut().zip(comp) {
                *o += v * v;
            }
        }
        out
    }

    /// Pointwise dot product.
    pub fn dot(&self, other: &VectorField) -> Vec<f64> {
        assert_eq!(self.dim(), other.dim());
        let mut out = vec![0.0; self.len()];
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += x * y;
            }
        }
        out
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }
}

/// Sparse operator in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOp {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in merge_entries(row) {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        SparseOp {
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| self.row(i).map(|(j, a)| a * f[j]).sum())
            .collect()
    }

    pub fn apply_scaled(&self, f: &ScaledField) -> ScaledField {
        ScaledField {
            values: (0..self.nrows())
                .map(|i| ScaledValue::combine(self.row(i).map(|(j, a)| (a, f.get(j)))))
                .collect(),
        }
    }

    /// `x^T A^T y`-style transpose product.
    pub fn apply_transpose(&self, f: &[f64], ncols: usize) -> Vec<f64> {
        let mut out = vec![0.0; ncols];
        for (i, fi) in f.iter().enumerate() {
            for (j, a) in self.row(i) {
                out[j] += a * fi;
            }
        }
        out
    }
}

fn merge_entries(mut row: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    row.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
    for (c, v) in row {
        match out.last_mut() {
            Some(last) if last.0 == c => last.1 += v,
            _ => out.push((c, v)),
        }
    }
    out
}

/// Uniform mesh on `(0,1)` or `(0,1)^2` with a designated observation boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    h: f64,
    gamma0_faces: Vec<Face>,
    boundary: Vec<bool>,
    in_gamma0: Vec<bool>,
    gamma0: Vec<usize>,
    normal_face: Vec<Option<Face>>,
}

/// Builds the mesh; Γ₀ is the union of the listed faces.
pub fn build_grid(dim: usize, n: usize, gamma0: &[Face]) -> Result<Grid> {
    Grid::new(dim, n, gamma0)
}

impl Grid {
    pub fn new(dim: usize, n: usize, gamma0: &[Face]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(LabError::Grid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if n < 4 {
            return Err(LabError::Grid(format!(
                "need at least 4 cells per axis, got {n}"
            )));
        }
        if gamma0.is_empty() {
            return Err(LabError::Grid(
                "observation boundary must be nonempty".into(),
            ));
        }
        let available: &[Face] = if dim == 1 {
            &[Face::West, Face::East]
        } else {
            &Face::ALL
        };
        for f in gamma0 {
            if !available.contains(f) {
                return Err(LabError::Grid(format!(
                    "face {f:?} does not exist in {dim}D"
                )));
            }
        }
        let mut faces: Vec<Face> = available
            .iter()
            .copied()
            .filter(|f| gamma0.contains(f))
            .collect();
        faces.dedup();
        if faces.len() == available.len() {
            return Err(LabError::Grid(
                "observation boundary must be a strict subset of the boundary".into(),
            ));
        }

        let count = (n + 1).pow(dim as u32);
        let mut grid = Grid {
            dim,
            n,
            h: 1.0 / n as f64,
            gamma0_faces: faces,
            boundary: vec![false; count],
            in_gamma0: vec![false; count],
            gamma0: Vec::new(),
            normal_face: vec![None; count],
        };
        for node in 0..count {
            let on: Vec<Face> = available
                .iter()
                .copied()
                .filter(|&f| grid.on_face(node, f))
                .collect();
            if on.is_empty() {
                continue;
            }
            grid.boundary[node] = true;
            let g0 = on.iter().copied().find(|f| grid.gamma0_faces.contains(f));
            if g0.is_some() {
                grid.in_gamma0[node] = true;
                grid.gamma0.push(node);
            }
            grid.normal_face[node] = Some(g0.unwrap_or(on[0]));
        }
        Ok(grid)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_nodes(&self) -> usize {
        self.boundary.len()
    }

    pub fn gamma0_faces(&self) -> &[Face] {
        &self.gamma0_faces
    }

    /// Γ₀ nodes in ascending index order.
    pub fn gamma0_nodes(&self) -> &[usize] {
        &self.gamma0
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn is_gamma0(&self, node: usize) -> bool {
        self.in_gamma0[node]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.boundary[i])
            .collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| !self.boundary[i])
            .collect()
    }

    /// The faces present in this dimension.
    pub fn faces(&self) -> &'static [Face] {
        if self.dim == 1 {
            &[Face::West, Face::East]
        } else {
            &Face::ALL
        }
    }

    /// Nodes lying on a face (corners included).
    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.on_face(i, face))
            .collect()
    }

    pub fn on_face(&self, node: usize, face: Face) -> bool {
        if face.axis() >= self.dim {
            return false;
        }
        let p = self.axis_index(node, face.axis());
        if face.is_high() {
            p == self.n
        } else {
            p == 0
        }
    }

    /// Unit outward normal at a boundary node (`None` in the interior).
    pub fn normal(&self, node: usize) -> Option<[f64; 2]> {
        self.normal_face[node].map(Face::outward_normal)
    }

    pub fn normal_face(&self, node: usize) -> Option<Face> {
        self.normal_face[node]
    }

    /// Position index of `node` along `axis`.
    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        match axis {
            0 => node % (self.n + 1),
            _ => node / (self.n + 1),
        }
    }

    fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.n + 1
        }
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn coord(&self, node: usize) -> [f64; 2] {
        let n = self.n as f64;
        let x = self.axis_index(node, 0) as f64 / n;
        let y = if self.dim == 2 {
            self.axis_index(node, 1) as f64 / n
        } else {
            0.0
        };
        [x, y]
    }

    /// Samples `f` at every node.
    pub fn sample<F: Fn([f64; 2]) -> f64>(&self, f: F) -> ScalarField {
        (0..self.num_nodes()).map(|i| f(self.coord(i))).collect()
    }

    /// Second-order first-derivative row along `axis` (one-sided at the ends).
    fn d1_row(&self, node: usize, axis: usize) -> Vec<(usize, f64)> {
        let s = self.stride(axis);
        let p = self.axis_index(node, axis);
        let r = 0.5 / self.h;
        if p == 0 {
            vec![(node, -3.0 * r), (node + s, 4.0 * r), (node + 2 * s, -r)]
        } else if p == self.n {
            vec![(node, 3.0 * r), (node - s, -4.0 * r), (node - 2 * s, r)]
        } else {
            vec![(node - s, -r), (node + s, r)]
        }
    }

    /// Second-order one-sided second-derivative row at an end of `axis`.
    fn d2_end_row(&self, node: usize, axis: usize) -> Vec<(usize, f64)> {
        let s = self.stride(axis);
        let p = self.axis_index(node, axis);
        let r = 1.0 / (self.h * self.h);
        let step = |k: usize| if p == 0 { node + k * s } else { node - k * s };
        vec![
            (step(0), 2.0 * r),
            (step(1), -5.0 * r),
            (step(2), 4.0 * r),
            (step(3), -r),
        ]
    }

    pub fn gradient_op(&self, axis: usize) -> SparseOp {
        SparseOp::from_rows(
            (0..self.num_nodes())
                .map(|i| self.d1_row(i, axis))
                .collect(),
        )
    }

    /// Conservative `div(c grad .)` with arithmetic face means in the
    /// interior, and `c f'' + c' f'` from one-sided stencils at the ends of
    /// each axis.
    pub fn flux_div_op(&self, c: &[f64]) -> Result<SparseOp> {
        self.check_len(c, "conductivity")?;
        if let Some(i) = c.iter().position(|&v| v.is_nan() || v <= 0.0) {
            return Err(LabError::Precondition(format!(
                "conductivity must be positive, got {} at node {i}",
                c[i]
            )));
        }
        Ok(self.flux_div_op_any(c))
    }

    /// [`Grid::flux_div_op`] without the sign check, for coefficient
    /// differences. The stencil is linear in the coefficient.
    pub fn flux_div_op_any(&self, c: &[f64]) -> SparseOp {
        let inv_h2 = 1.0 / (self.h * self.h);
        let rows = (0..self.num_nodes())
            .map(|node| {
                let mut row = Vec::with_capacity(5 * self.dim);
                for axis in 0..self.dim {
                    let s = self.stride(axis);
                    let p = self.axis_index(node, axis);
                    if p > 0 && p < self.n {
                        let cm = 0.5 * (c[node - s] + c[node]);
                        let cp = 0.5 * (c[node] + c[node + s]);
                        row.push((node - s, cm * inv_h2));
                        row.push((node + s, cp * inv_h2));
                        row.push((node, -(cm + cp) * inv_h2));
                    } else {
                        let d1 = self.d1_row(node, axis);
                        let dc: f64 = d1.iter().map(|&(j, a)| a * c[j]).sum();
                        for (j, a) in self.d2_end_row(node, axis) {
                            row.push((j, c[node] * a));
                        }
                        if dc != 0.0 {
                            for (j, a) in d1 {
                                row.push((j, dc * a));
                            }
                        }
                    }
                }
                row
            })
            .collect();
        SparseOp::from_rows(rows)
    }

    /// Neighbour of a boundary node one cell inward across `face`.
    pub fn inward_neighbor(&self, node: usize, face: Face) -> usize {
        let s = self.stride(face.axis());
        if face.is_high() {
            node - s
        } else {
            node + s
        }
    }

    pub fn laplacian_op(&self) -> SparseOp {
        self.flux_div_op(&vec![1.0; self.num_nodes()])
            .expect("unit conductivity is admissible")
    }

    /// Outward normal-derivative row at a boundary node.
    pub fn normal_derivative_row(&self, node: usize) -> Option<Vec<(usize, f64)>> {
        let face = self.normal_face[node]?;
        let row = self.d1_row(node, face.axis());
        // d1 rows differentiate along +axis; flip on the low face
        Some(if face.is_high() {
            row
        } else {
            row.into_iter().map(|(j, a)| (j, -a)).collect()
        })
    }

    pub fn normal_derivative(&self, field: &[f64], node: usize) -> Option<f64> {
        self.normal_derivative_row(node)
            .map(|row| row.iter().map(|&(j, a)| a * field[j]).sum())
    }

    /// Tensor trapezoid weights per node.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let axis_w = |p: usize| {
            if p == 0 || p == self.n {
                0.5 * self.h
            } else {
                self.h
            }
        };
        (0..self.num_nodes())
            .map(|i| {
                (0..self.dim)
                    .map(|a| axis_w(self.axis_index(i, a)))
                    .product()
            })
            .collect()
    }

    /// Trapezoid surface weights for the Γ₀ nodes (ordered as [`Grid::gamma0_nodes`]).
    ///
    /// In 1D Γ₀ is a point and carries weight 1. In 2D each face contributes a
    /// 1D trapezoid rule along its tangential axis.
    pub fn gamma0_weights(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![1.0; self.gamma0.len()];
        }
        self.gamma0
            .iter()
            .map(|&node| {
                self.gamma0_faces
                    .iter()
                    .filter(|&&f| self.on_face(node, f))
                    .map(|f| {
                        let t = 1 - f.axis();
                        let p = self.axis_index(node, t);
                        if p == 0 || p == self.n {
                            0.5 * self.h
                        } else {
                            self.h
                        }
                    })
                    .sum()
            })
            .collect()
    }

    pub(crate) fn check_len(&self, field: &[f64], what: &str) -> Result<()> {
        if field.len() != self.num_nodes() {
            return Err(LabError::Precondition(format!(
                "{what} has {} values, grid has {} nodes",
                field.len(),
                self.num_nodes()
            )));
        }
        Ok(())
    }

    /// Nodes within `rings` layers of the boundary (distance < rings cells).
    pub fn boundary_layer(&self, rings: usize) -> Vec<bool> {
        (0..self.num_nodes())
            .map(|i| {
                (0..self.dim).any(|a| {
                    let p = self.axis_index(i, a);
                    p < rings || p + rings > self.n
                })
            })
            .collect()
    }
}

pub fn discrete_gradient(field: &[f64], grid: &Grid) -> VectorField {
    VectorField {
        comps: (0..grid.dim())
            .map(|a| grid.gradient_op(a).apply(field))
            .collect(),
    }
}

pub fn discrete_laplacian(field: &[f64], grid: &Grid) -> ScalarField {
    grid.laplacian_op().apply(field)
}

pub fn divergence_flux(c: &[f64], field: &[f64], grid: &Grid) -> Result<ScalarField> {
    Ok(grid.flux_div_op(c)?.apply(field))
}

/// `∇(Δf)` composed from the gradient and Laplacian stencils.
pub fn grad_laplacian(field: &[f64], grid: &Grid) -> VectorField {
    discrete_gradient(&discrete_laplacian(field, grid), grid)
}

fn check_finite(field: &[f64]) -> Result<()> {
    match field.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(LabError::non_finite("integrand", i)),
        None => Ok(()),
    }
}

pub fn quadrature_space(field: &[f64], grid: &Grid) -> Result<f64> {
    grid.check_len(field, "integrand")?;
    check_finite(field)?;
    Ok(grid
        .quadrature_weights()
        .iter()
        .zip(field)
        .map(|(w, f)| w * f)
        .sum())
}

/// Trapezoid in space, then in time over all slices of `tg`.
pub fn quadrature_spacetime(field: &[Vec<f64>], grid: &Grid, tg: &TimeGrid) -> Result<f64> {
    if field.len() != tg.steps() + 1 {
        return Err(LabError::Precondition(format!(
            "space-time integrand has {} slices, time grid has {}",
            field.len(),
            tg.steps() + 1
        )));
    }
    let tw = tg.trapezoid_weights();
    let mut total = 0.0;
    for (slice, w) in field.iter().zip(tw) {
        total += w * quadrature_space(slice, grid)?;
    }
    Ok(total)
}

/// Uniform time axis on `[t0, T]` with an even number of steps, so that the
/// midpoint `T' = (t0 + T)/2` is a node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t0 >= 0.0 && t_end > t0 && t_end.is_finite()) {
            return Err(LabError::TimeGrid(format!(
                "need T > t0 >= 0, got t0 = {t0}, T = {t_end}"
            )));
        }
        if steps < 2 || steps % 2 != 0 {
            return Err(LabError::TimeGrid(format!(
                "step count m = {steps} must be even and at least 2 so that T' is a grid node"
            )));
        }
        Ok(TimeGrid {
            t0,
            t_end,
            steps,
            dt: (t_end - t0) / steps as f64,
        })
    }

    /// Observation window `[t0, T]` carved out of a uniform solve grid on
    /// `[0, T]` with `total_steps` steps.
    pub fn window_of_solve(t0: f64, t_end: f64, total_steps: usize) -> Result<Self> {
        if total_steps < 2 || total_steps % 2 != 0 {
            return Err(LabError::TimeGrid(format!(
                "step count m = {total_steps} must be even so that T' is a grid node"
            )));
        }
        if !(t_end > 0.0 && t0 >= 0.0 && t0 < t_end) {
            return Err(LabError::TimeGrid(format!(
                "need T > t0 >= 0, got t0 = {t0}, T = {t_end}"
            )));
        }
        let dt = t_end / total_steps as f64;
        let lead = (t0 / dt).round();
        if (lead * dt - t0).abs() > 1e-9 * t_end {
            return Err(LabError::TimeGrid(format!(
                "t0 = {t0} is not a node of the solve grid with dt = {dt}"
            )));
        }
        TimeGrid::new(t0, t_end, total_steps - lead as usize)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn midpoint_index(&self) -> usize {
        self.steps / 2
    }

    pub fn t_prime(&self) -> f64 {
        0.5 * (self.t0 + self.t_end)
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_end
        } else if i == self.midpoint_index() {
            self.t_prime()
        } else {
            self.t0 + i as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time(i)).collect()
    }

    /// Number of steps of size `dt` from 0 up to `t0`.
    pub fn lead_steps(&self) -> Result<usize> {
        let lead = (self.t0 / self.dt).round();
        if (lead * self.dt - self.t0).abs() > 1e-9 * self.t_end {
            return Err(LabError::TimeGrid(format!(
                "t0 = {} is not a multiple of dt = {}",
                self.t0, self.dt
            )));
        }
        Ok(lead as usize)
    }

    pub fn trapezoid_weights(&self) -> Vec<f64> {
        (0..=self.steps)
            .map(|i| {
                if i == 0 || i == self.steps {
                    0.5 * self.dt
                } else {
                    self.dt
                }
            })
            .collect()
    }

    /// `(t - t0)(T - t)` at node `i`, formed from integer offsets so that the
    /// midpoint symmetry is exact.
    pub fn theta(&self, i: usize) -> f64 {
        let a = i as f64;
        let b = (self.steps - i) as f64;
        self.dt * self.dt * a * b
    }

    /// `d/dt [(t - t0)(T - t)] = (T + t0 - 2t)` at node `i`.
    pub fn theta_dot(&self, i: usize) -> f64 {
        self.dt * (self.steps as f64 - 2.0 * i as f64)
    }
}
