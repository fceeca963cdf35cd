//! Reference heat data, admissible perturbations and twin solves.

use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::forward::{
    solve_heat, time_derivative, HeatProblem, Positivity, Snapshot, SpaceTimeField,
};
use crate::grid::{build_grid, Face, Grid, ScalarField, TimeGrid};

/// Positivity floor `r` of the reference data.
pub const FLOOR: f64 = 0.5;

/// Initial state, increasing in `x` so that the transport condition holds.
pub fn reference_initial(x: [f64; 2]) -> f64 {
    1.0 + x[0] + 0.25 * (PI * x[0]).sin()
}

fn bump(t: f64, freq: f64) -> f64 {
    (freq * PI * t).sin().powi(2)
}

/// Boundary data: the initial profile plus time pulses entering at both ends.
pub fn reference_boundary(t: f64, x: [f64; 2]) -> f64 {
    let right = 1.5 * bump(t, 0.5) + 0.6 * bump(t, 2.0);
    let left = 1.5 * bump(t, 1.0);
    reference_initial(x) + x[0] * right + (1.0 - x[0]) * left
}

/// Initial and boundary data of the forward problem.
#[derive(Clone, Copy, Debug)]
pub struct HeatData {
    pub initial: fn([f64; 2]) -> f64,
    pub boundary: fn(f64, [f64; 2]) -> f64,
    pub floor: f64,
}

impl Default for HeatData {
    fn default() -> Self {
        HeatData {
            initial: reference_initial,
            boundary: reference_boundary,
            floor: FLOOR,
        }
    }
}

/// Grid, solve axis on `[0, T]` and observation window `[t0, T]`.
#[derive(Clone, Debug)]
pub struct Setup {
    pub grid: Grid,
    pub full: TimeGrid,
    pub window: TimeGrid,
    pub data: HeatData,
}

impl Setup {
    pub fn new(dim: usize, n: usize, gamma0: &[Face], t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        let grid = build_grid(dim, n, gamma0)?;
        let full = TimeGrid::new(0.0, t_end, steps)?;
        let window = TimeGrid::window_of_solve(t0, t_end, steps)?;
        Ok(Setup {
            grid,
            full,
            window,
            data: HeatData::default(),
        })
    }

    /// 1D, observation at `x = 1`, window `[0.5, 2]`, `dt = T / steps`.
    pub fn reference_1d(n: usize, steps: usize) -> Result<Self> {
        Setup::new(1, n, &[Face::East], 0.5, 2.0, steps)
    }

    pub fn problem(&self, c: ScalarField) -> HeatProblem {
        HeatProblem::new(
            c,
            self.grid.sample(self.data.initial),
            self.data.boundary,
            Positivity::Floor(self.data.floor),
        )
    }

    pub fn solve(&self, c: &[f64]) -> Result<SpaceTimeField> {
        solve_heat(&self.problem(c.to_vec()), &self.grid, &self.full)
    }
}

/// Perturbation shapes `x^2 (1-x)^2 {1, sin(k pi x)}`, tensorized in 2D.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Plain,
    Sine(u32),
}

impl Shape {
    pub const FAMILY: [Shape; 4] = [Shape::Plain, Shape::Sine(1), Shape::Sine(2), Shape::Sine(3)];

    pub fn name(self) -> String {
        match self {
            Shape::Plain => "bump".into(),
            Shape::Sine(k) => format!("bump_sin{k}"),
        }
    }

    fn profile(self, x: f64) -> f64 {
        let bump = x * x * (1.0 - x) * (1.0 - x);
        match self {
            Shape::Plain => bump,
            Shape::Sine(k) => bump * (k as f64 * PI * x).sin(),
        }
    }
}

/// `eps` times the shape, sampled and projected onto the admissible set.
pub fn perturbation(grid: &Grid, eps: f64, shape: Shape) -> ScalarField {
    let mut gamma = grid.sample(|x| {
        let mut v = shape.profile(x[0]);
        if grid.dim() == 2 {
            v *= shape.profile(x[1]);
        }
        eps * v
    });
    project_admissible(grid, &mut gamma);
    gamma
}

/// Zeroes the two outer node rings, the discrete analogue of `gamma, grad gamma = 0` on the boundary.
pub fn project_admissible(grid: &Grid, field: &mut [f64]) {
    for (v, outer) in field.iter_mut().zip(grid.boundary_layer(2)) {
        if outer {
            *v = 0.0;
        }
    }
}

/// Checks nodal values and first differences across the boundary vanish.
pub fn check_admissible(grid: &Grid, gamma: &[f64]) -> Result<()> {
    grid.check_len(gamma, "perturbation")?;
    for b in grid.boundary_nodes() {
        if gamma[b].abs() >= 1e-12 {
            return Err(LabError::Precondition(format!(
                "perturbation is {} at boundary node {b}",
                gamma[b]
            )));
        }
        let face = grid.normal_face(b).expect("boundary node");
        let inner = grid.inward_neighbor(b, face);
        let diff = (gamma[b] - gamma[inner]) / grid.h();
        if diff.abs() >= 1e-12 {
            return Err(LabError::Precondition(format!(
                "normal difference of the perturbation is {diff} at boundary node {b}"
            )));
        }
    }
    Ok(())
}

/// `c`, `c_ref` and everything derived from solving with both.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinSolve {
    pub c: ScalarField,
    pub c_ref: ScalarField,
    pub gamma: ScalarField,
    pub q: SpaceTimeField,
    pub q_ref: SpaceTimeField,
    pub u: SpaceTimeField,
    pub y: SpaceTimeField,
}

pub fn twin_solve(setup: &Setup, c: &[f64], c_ref: &[f64]) -> Result<TwinSolve> {
    let q = setup.solve(c)?;
    let q_ref = setup.solve(c_ref)?;
    let u = q.sub(&q_ref);
    let y = time_derivative(&u)?;
    Ok(TwinSolve {
        c: c.to_vec(),
        c_ref: c_ref.to_vec(),
        gamma: c.iter().zip(c_ref).map(|(a, b)| a - b).collect(),
        q,
        q_ref,
        u,
        y,
    })
}

impl TwinSolve {
    /// Snapshot of `q_ref` at `T'` (operators with `c_ref`).
    pub fn base_snapshot(&self, setup: &Setup) -> Result<Snapshot> {
        crate::forward::snapshot_package(&self.q_ref, &setup.grid, &setup.window, &self.c_ref)
    }

    /// Snapshot of `u` at `T'` (operators with `c`).
    pub fn u_snapshot(&self, setup: &Setup) -> Result<Snapshot> {
        crate::forward::snapshot_package(&self.u, &setup.grid, &setup.window, &self.c)
    }

    pub fn y_snapshot(&self, setup: &Setup) -> Result<Snapshot> {
        crate::forward::snapshot_package(&self.y, &setup.grid, &setup.window, &self.c)
    }

    /// `y` on every window node.
    pub fn y_window(&self, setup: &Setup) -> Result<Vec<ScalarField>> {
        Ok(self.y.window_slices(&setup.window)?.to_vec())
    }
}
