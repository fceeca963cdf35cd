//! Crank–Nicolson solver for `d_t q = div(c grad q)` with Dirichlet data.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::grid::{
    discrete_gradient, discrete_laplacian, grad_laplacian, Grid, ScalarField, SparseOp, TimeGrid,
    VectorField,
};
use crate::linalg::{conjugate_gradient, Tridiagonal};

/// Relative residual at which the 2D step solves stop.
pub const CG_TOL: f64 = 1e-12;

/// Boundary data `g(t, x)`.
pub type BoundaryFn = Arc<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Positivity {
    /// `q0 >= r` and `g >= r` are enforced.
    Floor(f64),
    /// Manufactured-solution mode: positivity is not checked.
    VerificationOnly,
}

#[derive(Clone)]
pub struct HeatProblem {
    pub c: ScalarField,
    pub q0: ScalarField,
    pub g: BoundaryFn,
    pub positivity: Positivity,
}

impl fmt::Debug for HeatProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HeatProblem")
            .field("c", &self.c)
            .field("q0", &self.q0)
            .field("positivity", &self.positivity)
            .finish_non_exhaustive()
    }
}

impl HeatProblem {
    pub fn new<G>(c: ScalarField, q0: ScalarField, g: G, positivity: Positivity) -> Self
    where
        G: Fn(f64, [f64; 2]) -> f64 + Send + Sync + 'static,
    {
        HeatProblem {
            c,
            q0,
            g: Arc::new(g),
            positivity,
        }
    }

    /// Same data with a different conductivity.
    pub fn with_conductivity(&self, c: ScalarField) -> Self {
        HeatProblem { c, ..self.clone() }
    }

    pub fn validate(&self, grid: &Grid, tg: &TimeGrid) -> Result<()> {
        grid.check_len(&self.c, "conductivity")?;
        grid.check_len(&self.q0, "initial state")?;
        if let Some(i) = self.c.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(LabError::Problem(format!(
                "conductivity must be positive, got {} at node {i}",
                self.c[i]
            )));
        }
        if let Some(i) = self.q0.iter().position(|v| !v.is_finite()) {
            return Err(LabError::non_finite("initial state", i));
        }
        for node in grid.boundary_nodes() {
            let g0 = (self.g)(tg.time(0), grid.coord(node));
            if (g0 - self.q0[node]).abs() > 1e-12 {
                return Err(LabError::Problem(format!(
                    "incompatible data at node {node}: q0 = {}, g(0) = {g0}",
                    self.q0[node]
                )));
            }
        }
        if let Positivity::Floor(r) = self.positivity {
            if !(r > 0.0) {
                return Err(LabError::Problem(format!(
                    "positivity floor must be > 0, got {r}"
                )));
            }
            if let Some(i) = self.q0.iter().position(|&v| v < r) {
                return Err(LabError::Problem(format!(
                    "q0 = {} < r = {r} at node {i}",
                    self.q0[i]
                )));
            }
            for k in 0..=tg.steps() {
                let t = tg.time(k);
                for node in grid.boundary_nodes() {
                    let v = (self.g)(t, grid.coord(node));
                    if !(v >= r) {
                        return Err(LabError::Problem(format!(
                            "g = {v} < r = {r} at node {node}, t = {t}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Nodal values over every node of a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub values: Vec<ScalarField>,
    pub timegrid: TimeGrid,
}

impl SpaceTimeField {
    pub fn new(values: Vec<ScalarField>, timegrid: TimeGrid) -> Result<Self> {
        if values.len() != timegrid.steps() + 1 {
            return Err(LabError::Precondition(format!(
                "{} slices for a time grid with {} nodes",
                values.len(),
                timegrid.steps() + 1
            )));
        }
        Ok(SpaceTimeField { values, timegrid })
    }

    pub fn num_slices(&self) -> usize {
        self.values.len()
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    /// Offset of `window`'s first node inside this field's time axis.
    pub fn window_offset(&self, window: &TimeGrid) -> Result<usize> {
        let full = &self.timegrid;
        if (window.dt() - full.dt()).abs() > 1e-12 * full.dt() || window.t_end() != full.t_end() {
            return Err(LabError::TimeGrid(format!(
                "window [{}, {}] with dt = {} is not aligned with the solve grid (dt = {})",
                window.t0(),
                window.t_end(),
                window.dt(),
                full.dt()
            )));
        }
        let lead = full.steps() - window.steps();
        if (full.time(lead) - window.t0()).abs() > 1e-9 * full.t_end().max(1.0) {
            return Err(LabError::TimeGrid(format!(
                "window start {} is not a node of the solve grid",
                window.t0()
            )));
        }
        Ok(lead)
    }

    /// Slice at window node `i`.
    pub fn window_slice(&self, window: &TimeGrid, i: usize) -> Result<&[f64]> {
        Ok(&self.values[self.window_offset(window)? + i])
    }

    /// Window slices `0..=window.steps()`.
    pub fn window_slices(&self, window: &TimeGrid) -> Result<&[ScalarField]> {
        let lead = self.window_offset(window)?;
        Ok(&self.values[lead..])
    }

    pub fn sub(&self, other: &SpaceTimeField) -> SpaceTimeField {
        assert_eq!(self.values.len(), other.values.len());
        SpaceTimeField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
            timegrid: self.timegrid,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Rows `t_index,node,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t_index,node,value")?;
        for (k, slice) in self.values.iter().enumerate() {
            for (node, v) in slice.iter().enumerate() {
                writeln!(out, "{k},{node},{v:.16e}")?;
            }
        }
        Ok(())
    }
}

enum InteriorSolver {
    Banded(Tridiagonal),
    Iterative { op: SparseOp, max_iter: usize },
}

/// One Crank–Nicolson step `A q^{n+1}_I = B q^n_I + (dt/2) L_IB (q^n_B + q^{n+1}_B)`
/// with `A = I - dt/2 L_II`, `B = I + dt/2 L_II`. Both are symmetric.
pub struct CnStepper {
    interior: Vec<usize>,
    boundary: Vec<usize>,
    /// Position of each node among the interior unknowns, or `usize::MAX`.
    pos: Vec<usize>,
    op: SparseOp,
    b_op: SparseOp,
    solver: InteriorSolver,
    dt: f64,
}

impl CnStepper {
    pub fn new(grid: &Grid, c: &[f64], dt: f64) -> Result<Self> {
        let op = grid.flux_div_op(c)?;
        let interior = grid.interior_nodes();
        let boundary = grid.boundary_nodes();
        let mut pos = vec![usize::MAX; grid.num_nodes()];
        for (k, &i) in interior.iter().enumerate() {
            pos[i] = k;
        }
        let half = 0.5 * dt;
        let restricted = |sign: f64| -> Vec<Vec<(usize, f64)>> {
            interior
                .iter()
                .map(|&i| {
                    let mut row: Vec<(usize, f64)> = op
                        .row(i)
                        .filter(|&(j, _)| pos[j] != usize::MAX)
                        .map(|(j, a)| (pos[j], sign * half * a))
                        .collect();
                    row.push((pos[i], 1.0));
                    row
                })
                .collect()
        };
        let a_rows = restricted(-1.0);
        let b_op = SparseOp::from_rows(restricted(1.0));
        let solver = if grid.dim() == 1 {
            let m = interior.len();
            let mut diag = vec![0.0; m];
            let mut off = vec![0.0; m.saturating_sub(1)];
            for (k, row) in a_rows.iter().enumerate() {
                for &(j, a) in row {
                    if j == k {
                        diag[k] += a;
                    } else if j == k + 1 {
                        off[k] = a;
                    }
                }
            }
            InteriorSolver::Banded(Tridiagonal { diag, off })
        } else {
            InteriorSolver::Iterative {
                op: SparseOp::from_rows(a_rows),
                max_iter: 10 * grid.n(),
            }
        };
        Ok(CnStepper {
            interior,
            boundary,
            pos,
            op,
            b_op,
            solver,
            dt,
        })
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The full flux-form operator.
    pub fn operator(&self) -> &SparseOp {
        &self.op
    }

    pub fn position(&self, node: usize) -> Option<usize> {
        match self.pos[node] {
            usize::MAX => None,
            k => Some(k),
        }
    }

    /// Solves `A x = rhs` on interior unknowns.
    pub fn solve_a(&self, rhs: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        match &self.solver {
            InteriorSolver::Banded(t) => t.solve(rhs),
            InteriorSolver::Iterative { op, max_iter } => {
                conjugate_gradient(op, rhs, guess, CG_TOL, *max_iter).map(|(x, _)| x)
            }
        }
    }

    /// `A x` on interior unknowns.
    pub fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        let bx = self.b_op.apply(x);
        x.iter().zip(&bx).map(|(xi, bi)| 2.0 * xi - bi).collect()
    }

    /// `B x` on interior unknowns.
    pub fn apply_b(&self, x: &[f64]) -> Vec<f64> {
        self.b_op.apply(x)
    }

    /// Advances `prev` by one step; `next` must already hold the new boundary values.
    pub fn step(&self, prev: &[f64], next: &mut [f64]) -> Result<()> {
        let half = 0.5 * self.dt;
        let rhs: Vec<f64> = self
            .interior
            .iter()
            .map(|&i| {
                let mut v = prev[i];
                for (j, a) in self.op.row(i) {
                    v += half * a * prev[j];
                    if self.pos[j] == usize::MAX {
                        v += half * a * next[j];
                    }
                }
                v
            })
            .collect();
        let guess: Vec<f64> = self.interior.iter().map(|&i| prev[i]).collect();
        let x = self.solve_a(&rhs, Some(&guess))?;
        for (k, &i) in self.interior.iter().enumerate() {
            if !x[k].is_finite() {
                return Err(LabError::non_finite("heat state", i));
            }
            next[i] = x[k];
        }
        Ok(())
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }
}

/// Solves the heat problem on `tg`, which must start at `t = 0`.
pub fn solve_heat(problem: &HeatProblem, grid: &Grid, tg: &TimeGrid) -> Result<SpaceTimeField> {
    if tg.t0() != 0.0 {
        return Err(LabError::Precondition(format!(
            "the forward solve starts at t = 0, got t0 = {}",
            tg.t0()
        )));
    }
    problem.validate(grid, tg)?;
    let stepper = CnStepper::new(grid, &problem.c, tg.dt())?;
    let coords: Vec<[f64; 2]> = stepper.boundary().iter().map(|&b| grid.coord(b)).collect();
    let mut values = Vec::with_capacity(tg.steps() + 1);
    values.push(problem.q0.clone());
    for k in 1..=tg.steps() {
        let t = tg.time(k);
        let prev = &values[k - 1];
        let mut next = vec![0.0; grid.num_nodes()];
        for (&b, &x) in stepper.boundary().iter().zip(&coords) {
            next[b] = (problem.g)(t, x);
        }
        stepper.step(prev, &mut next)?;
        values.push(next);
    }
    SpaceTimeField::new(values, *tg)
}

/// Centered differences in time, second-order one-sided at the ends.
pub fn time_derivative(field: &SpaceTimeField) -> Result<SpaceTimeField> {
    let k_max = field.num_slices();
    if k_max < 3 {
        return Err(LabError::Precondition(format!(
            "time derivative needs at least 3 slices, got {k_max}"
        )));
    }
    let r = 0.5 / field.timegrid.dt();
    let f = &field.values;
    let nodes = f[0].len();
    let values = (0..k_max)
        .map(|k| {
            (0..nodes)
                .map(|i| {
                    if k == 0 {
                        r * (-3.0 * f[0][i] + 4.0 * f[1][i] - f[2][i])
                    } else if k == k_max - 1 {
                        r * (3.0 * f[k][i] - 4.0 * f[k - 1][i] + f[k - 2][i])
                    } else {
                        r * (f[k + 1][i] - f[k - 1][i])
                    }
                })
                .collect()
        })
        .collect();
    SpaceTimeField::new(values, field.timegrid)
}

/// Interior quantities of a solution at `T'`.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub q: ScalarField,
    pub grad: VectorField,
    pub lap: ScalarField,
    pub grad_lap: VectorField,
    /// `div(c grad q)` at `T'`.
    pub flux_div: ScalarField,
}

impl Snapshot {
    pub fn of_field(q: &[f64], grid: &Grid, c: &[f64]) -> Result<Self> {
        grid.check_len(q, "snapshot field")?;
        Ok(Snapshot {
            q: q.to_vec(),
            grad: discrete_gradient(q, grid),
            lap: discrete_laplacian(q, grid),
            grad_lap: grad_laplacian(q, grid),
            flux_div: grid.flux_div_op(c)?.apply(q),
        })
    }
}

/// Extracts the `T'` slice of `field` (`window` locates `T'`) and its derivatives.
pub fn snapshot_package(
    field: &SpaceTimeField,
    grid: &Grid,
    window: &TimeGrid,
    c: &[f64],
) -> Result<Snapshot> {
    let q = field.window_slice(window, window.midpoint_index())?;
    Snapshot::of_field(q, grid, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Face};
    use std::f64::consts::PI;

    fn manufactured(n: usize, steps: usize) -> (Grid, SpaceTimeField) {
        let g = build_grid(1, n, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, steps).unwrap();
        let p = HeatProblem::new(
            vec![1.0 / (PI * PI); g.num_nodes()],
            g.sample(|x| (PI * x[0]).sin()),
            |_, _| 0.0,
            Positivity::VerificationOnly,
        );
        let q = solve_heat(&p, &g, &tg).unwrap();
        (g, q)
    }

    fn manufactured_error(n: usize, steps: usize) -> f64 {
        let (g, q) = manufactured(n, steps);
        let mut err: f64 = 0.0;
        for (k, slice) in q.values.iter().enumerate() {
            let t = q.timegrid.time(k);
            for (i, v) in slice.iter().enumerate() {
                err = err.max((v - (-t).exp() * (PI * g.coord(i)[0]).sin()).abs());
            }
        }
        err
    }

    #[test]
    fn manufactured_solution_at_reference_point() {
        let (g, q) = manufactured(32, 128);
        let v = q.slice(64)[g.node(16, 0)];
        assert!((v - (-1f64).exp()).abs() < 1e-3, "{v}");
        assert!(manufactured_error(32, 128) < 1e-3);
    }

    #[test]
    fn manufactured_convergence_order() {
        let e1 = manufactured_error(16, 64);
        let e2 = manufactured_error(32, 128);
        let e3 = manufactured_error(64, 256);
        assert!((e1 / e2).log2() >= 1.8, "{e1} {e2}");
        assert!((e2 / e3).log2() >= 1.8, "{e2} {e3}");
    }

    #[test]
    fn constant_state_is_preserved() {
        for dim in [1, 2] {
            let g = build_grid(dim, 8, &[Face::East]).unwrap();
            let tg = TimeGrid::new(0.0, 1.0, 16).unwrap();
            let p = HeatProblem::new(
                vec![1.0; g.num_nodes()],
                vec![1.0; g.num_nodes()],
                |_, _| 1.0,
                Positivity::Floor(0.5),
            );
            let q = solve_heat(&p, &g, &tg).unwrap();
            let dev = q
                .values
                .iter()
                .flatten()
                .fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
            assert!(dev < 1e-13, "dim {dim}: {dev}");
        }
    }

    #[test]
    fn two_dimensional_separable_decay() {
        let g = build_grid(2, 16, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 0.5, 32).unwrap();
        let p = HeatProblem::new(
            vec![1.0 / (PI * PI); g.num_nodes()],
            g.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin()),
            |_, _| 0.0,
            Positivity::VerificationOnly,
        );
        let q = solve_heat(&p, &g, &tg).unwrap();
        let mid = g.node(8, 8);
        let exact = (-2.0 * 0.5f64).exp();
        assert!((q.slice(32)[mid] - exact).abs() < 5e-3);
    }

    #[test]
    fn rejects_incompatible_or_nonpositive_data() {
        let g = build_grid(1, 8, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let bad_compat = HeatProblem::new(
            vec![1.0; 9],
            vec![1.0; 9],
            |_, _| 2.0,
            Positivity::Floor(0.5),
        );
        assert!(matches!(
            solve_heat(&bad_compat, &g, &tg),
            Err(LabError::Problem(_))
        ));
        let bad_floor = HeatProblem::new(
            vec![1.0; 9],
            vec![0.1; 9],
            |_, _| 0.1,
            Positivity::Floor(0.5),
        );
        assert!(matches!(
            solve_heat(&bad_floor, &g, &tg),
            Err(LabError::Problem(_))
        ));
        let bad_c = HeatProblem::new(
            vec![0.0; 9],
            vec![1.0; 9],
            |_, _| 1.0,
            Positivity::Floor(0.5),
        );
        assert!(matches!(
            solve_heat(&bad_c, &g, &tg),
            Err(LabError::Problem(_))
        ));
    }

    #[test]
    fn maximum_principle_for_small_steps() {
        // dt c / h^2 <= 1 keeps the explicit half of CN nonnegative
        let g = build_grid(1, 8, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 128).unwrap();
        let r = 0.5;
        let p = HeatProblem::new(
            g.sample(|x| 1.0 + 0.5 * x[0]),
            g.sample(|x| r + x[0] * x[0] + 0.3 * (PI * x[0]).sin()),
            move |t, x| r + x[0] * x[0] + 0.2 * (PI * t).sin().powi(2) * x[0],
            Positivity::Floor(r),
        );
        let q = solve_heat(&p, &g, &tg).unwrap();
        let min = q
            .values
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min >= r - 1e-8, "{min}");
    }

    #[test]
    fn solution_is_affine_in_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for dim in [1, 2] {
            let g = build_grid(dim, 8, &[Face::East]).unwrap();
            let tg = TimeGrid::new(0.0, 0.5, 16).unwrap();
            let c = g.sample(|x| 1.0 + 0.3 * x[0] + 0.1 * x[1]);
            let make = |rng: &mut rand_chacha::ChaCha8Rng| {
                let (a, b, w): (f64, f64, f64) = (
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(1.0..4.0),
                );
                let gfun = move |t: f64, x: [f64; 2]| a * x[0] + b * (w * t).sin() * x[1] + a * t;
                let mut q0 = g.sample(|x| gfun(0.0, x));
                for i in g.interior_nodes() {
                    q0[i] += rng.random_range(-1.0..1.0);
                }
                HeatProblem::new(c.clone(), q0, gfun, Positivity::VerificationOnly)
            };
            let p1 = make(&mut rng);
            let p2 = make(&mut rng);
            let (g1, g2) = (p1.g.clone(), p2.g.clone());
            let sum = HeatProblem {
                c: c.clone(),
                q0: p1.q0.iter().zip(&p2.q0).map(|(a, b)| 2.0 * a - b).collect(),
                g: Arc::new(move |t, x| 2.0 * g1(t, x) - g2(t, x)),
                positivity: Positivity::VerificationOnly,
            };
            let (s1, s2, s3) = (
                solve_heat(&p1, &g, &tg).unwrap(),
                solve_heat(&p2, &g, &tg).unwrap(),
                solve_heat(&sum, &g, &tg).unwrap(),
            );
            for k in 0..=tg.steps() {
                for i in 0..g.num_nodes() {
                    let lin = 2.0 * s1.slice(k)[i] - s2.slice(k)[i];
                    assert!(
                        (lin - s3.slice(k)[i]).abs() < 1e-10 * (1.0 + lin.abs()),
                        "dim {dim} k {k} i {i}: {lin} vs {}",
                        s3.slice(k)[i]
                    );
                }
            }
        }
    }

    #[test]
    fn twin_solves_coincide() {
        let g = build_grid(1, 16, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, 64).unwrap();
        let p = HeatProblem::new(
            g.sample(|x| 1.0 + x[0]),
            g.sample(|x| 1.0 + x[0]),
            |t, x| 1.0 + x[0] + t * x[0],
            Positivity::Floor(0.5),
        );
        let a = solve_heat(&p, &g, &tg).unwrap();
        let b = solve_heat(&p.with_conductivity(p.c.clone()), &g, &tg).unwrap();
        assert_eq!(a.sub(&b).max_abs(), 0.0);
    }

    #[test]
    fn time_derivative_accuracy() {
        let err = |steps: usize| {
            let tg = TimeGrid::new(0.0, 2.0, steps).unwrap();
            let g = build_grid(1, 8, &[Face::East]).unwrap();
            let f = SpaceTimeField::new(
                (0..=steps)
                    .map(|k| g.sample(|x| (-tg.time(k)).exp() * (PI * x[0]).sin()))
                    .collect(),
                tg,
            )
            .unwrap();
            let d = time_derivative(&f).unwrap();
            let mut e: f64 = 0.0;
            for k in 0..=steps {
                for i in 0..9 {
                    let exact = -(-tg.time(k)).exp() * (PI * g.coord(i)[0]).sin();
                    e = e.max((d.slice(k)[i] - exact).abs());
                }
            }
            (e, d.slice(steps / 2)[4])
        };
        let (e1, v) = err(64);
        assert!((v + (-1f64).exp()).abs() < 1e-3);
        let (e2, _) = err(128);
        let (e3, _) = err(256);
        assert!((e1 / e2).log2() >= 1.9 && (e2 / e3).log2() >= 1.9);
    }

    #[test]
    fn time_derivative_of_constant_is_zero() {
        let tg = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let f = SpaceTimeField::new(vec![vec![3.0; 5]; 5], tg).unwrap();
        assert_eq!(time_derivative(&f).unwrap().max_abs(), 0.0);
        let short = SpaceTimeField {
            values: vec![vec![1.0]; 2],
            timegrid: tg,
        };
        assert!(time_derivative(&short).is_err());
    }

    #[test]
    fn snapshot_derivatives() {
        let run = |n: usize| {
            let g = build_grid(1, n, &[Face::East]).unwrap();
            let s = Snapshot::of_field(&g.sample(|x| (PI * x[0]).sin()), &g, &vec![1.0; n + 1])
                .unwrap();
            let mut e_lap: f64 = 0.0;
            let mut e_gl: f64 = 0.0;
            for i in 1..n {
                let x = g.coord(i)[0];
                e_lap = e_lap.max((s.lap[i] + PI * PI * (PI * x).sin()).abs());
                if i >= 2 && i + 2 <= n {
                    e_gl = e_gl.max((s.grad_lap.comps[0][i] + PI.powi(3) * (PI * x).cos()).abs());
                }
            }
            (e_lap, e_gl)
        };
        let (a1, b1) = run(32);
        let (a2, b2) = run(64);
        assert!((a1 / a2).log2() > 1.9);
        assert!((b1 / b2).log2() > 1.5);

        let g = build_grid(2, 8, &[Face::East]).unwrap();
        let s = Snapshot::of_field(&vec![2.5; 81], &g, &vec![1.0; 81]).unwrap();
        for v in s
            .lap
            .iter()
            .chain(&s.flux_div)
            .chain(s.grad.comps.iter().flatten())
        {
            assert!(v.abs() < 1e-11);
        }
    }

    #[test]
    fn snapshot_laplacian_2d_refines() {
        let err = |n: usize| {
            let g = build_grid(2, n, &[Face::East]).unwrap();
            let q = g.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
            let s = Snapshot::of_field(&q, &g, &vec![1.0; g.num_nodes()]).unwrap();
            g.interior_nodes()
                .iter()
                .map(|&i| (s.lap[i] + 2.0 * PI * PI * q[i]).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(8), err(16));
        assert!((e1 / e2).log2() > 1.9);
        assert!(e2 < 0.1);
    }

    #[test]
    fn window_slices_align() {
        let tg = TimeGrid::new(0.0, 2.0, 128).unwrap();
        let f = SpaceTimeField::new((0..=128).map(|k| vec![k as f64]).collect(), tg).unwrap();
        let w = TimeGrid::window_of_solve(0.5, 2.0, 128).unwrap();
        assert_eq!(f.window_offset(&w).unwrap(), 32);
        assert_eq!(f.window_slice(&w, w.midpoint_index()).unwrap(), &[80.0]);
        let off = TimeGrid::new(0.5, 2.0, 64).unwrap();
        assert!(f.window_offset(&off).is_err());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let tg = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let f = SpaceTimeField::new(vec![vec![0.0, 1.0]; 3], tg).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t_index,node,value");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[2], "0,1,1.0000000000000000e0");
    }
}
