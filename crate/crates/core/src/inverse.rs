//! Output least-squares reconstruction of the conductivity from the boundary
//! flux, with the gradient taken through the discrete adjoint of the
//! Crank–Nicolson scheme.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};
use crate::experiment::{project_admissible, Setup};
use crate::forward::{time_derivative, CnStepper, SpaceTimeField};
use crate::grid::{discrete_gradient, Grid, ScalarField, SparseOp};
use crate::linalg::conjugate_gradient;
use crate::observe::{
    extract_observations, flux_trace, plain_norm_space, plain_norm_space_vec, ObservationSet,
};
use crate::report::fmt_value;

/// Barzilai–Borwein trial step: `s^T M s / s^T y`, `s^T y / y^T M^{-1} y`, or both in turn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    Long,
    Short,
    Alternating,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InverseConfig {
    /// Weight of the `H^1` penalty around the prior.
    pub alpha: f64,
    pub prior: ScalarField,
    pub max_iter: usize,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Number of past misfit values the sufficient-decrease test compares against.
    pub memory: usize,
    /// Stop once the preconditioned gradient norm falls below this fraction of its initial value.
    pub grad_tol: f64,
    pub c_min: f64,
    /// Squared length scale of the `H^1` preconditioner.
    pub smoothing: f64,
    /// Power of the smoothing operator in the preconditioner metric.
    pub metric_order: usize,
    pub step_rule: StepRule,
    /// Standard deviation of the additive trace noise.
    pub sigma: f64,
    pub seed: u64,
}

impl InverseConfig {
    pub fn new(prior: ScalarField) -> Self {
        InverseConfig {
            alpha: 1e-8,
            prior,
            max_iter: 200,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            memory: 10,
            grad_tol: 1e-8,
            c_min: 0.1,
            smoothing: 0.2,
            metric_order: 2,
            step_rule: StepRule::Alternating,
            sigma: 0.0,
            seed: 42,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        grid.check_len(&self.prior, "prior")?;
        let bad = |what: &str, v: f64| {
            Err(LabError::Config(format!("{what} = {v} is out of range")))
        };
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return bad("armijo", self.armijo);
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink", self.shrink);
        }
        if self.memory == 0 {
            return Err(LabError::Config("memory must be at least 1".into()));
        }
        if self.metric_order == 0 {
            return Err(LabError::Config("metric_order must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol", self.grad_tol);
        }
        if !(self.c_min > 0.0) {
            return bad("c_min", self.c_min);
        }
        if !(self.smoothing >= 0.0) {
            return bad("smoothing", self.smoothing);
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma", self.sigma);
        }
        if let Some(i) = self.prior.iter().position(|&v| !(v >= self.c_min)) {
            return Err(LabError::Config(format!(
                "prior {} at node {i} is below c_min = {}",
                self.prior[i], self.c_min
            )));
        }
        Ok(())
    }
}

/// Solves with `c` and returns the solution and its boundary flux trace.
fn forward(setup: &Setup, c: &[f64]) -> Result<(SpaceTimeField, Vec<Vec<f64>>)> {
    let q = setup.solve(c)?;
    let trace = flux_trace(&time_derivative(&q)?, &setup.grid, &setup.window)?;
    Ok((q, trace))
}

/// Noiseless observations of the solution with `c`.
pub fn synthetic_data(setup: &Setup, c: &[f64]) -> Result<ObservationSet> {
    extract_observations(&setup.solve(c)?, &setup.grid, &setup.window, c)
}

/// Observations with the configured trace noise.
pub fn noisy_data(setup: &Setup, c: &[f64], config: &InverseConfig) -> Result<ObservationSet> {
    let mut data = synthetic_data(setup, c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    data.add_noise(config.sigma, false, &mut rng)?;
    Ok(data)
}

/// Trace residual `W_b (d - d*)` with `W_b = dt * surface weight`, and the misfit.
fn trace_residual(
    trace: &[Vec<f64>],
    data: &ObservationSet,
    setup: &Setup,
) -> Result<(Vec<Vec<f64>>, f64)> {
    if trace.len() != data.flux_trace.len()
        || trace.iter().zip(&data.flux_trace).any(|(a, b)| a.len() != b.len())
    {
        return Err(LabError::Precondition(
            "observation trace does not match the setup".into(),
        ));
    }
    let dt = setup.window.dt();
    let gw = setup.grid.gamma0_weights();
    let mut misfit = 0.0;
    let residual = trace
        .iter()
        .zip(&data.flux_trace)
        .zip(&gw)
        .map(|((model, obs), w)| {
            model
                .iter()
                .zip(obs)
                .map(|(m, o)| {
                    let d = m - o;
                    misfit += 0.5 * dt * w * d * d;
                    dt * w * d
                })
                .collect()
        })
        .collect();
    Ok((residual, misfit))
}

/// `||f||^2_{H^1}` with the trapezoid rule and the centered gradient.
pub fn h1_norm_sq(field: &[f64], grid: &Grid) -> Result<f64> {
    Ok(plain_norm_space(field, grid)? + plain_norm_space_vec(&discrete_gradient(field, grid), grid)?)
}

fn regularization(c: &[f64], grid: &Grid, config: &InverseConfig) -> Result<(f64, ScalarField)> {
    let diff: Vec<f64> = c.iter().zip(&config.prior).map(|(a, b)| a - b).collect();
    if config.alpha == 0.0 {
        return Ok((0.0, vec![0.0; c.len()]));
    }
    let qw = grid.quadrature_weights();
    let mut grad: Vec<f64> = diff.iter().zip(&qw).map(|(d, w)| config.alpha * w * d).collect();
    for axis in 0..grid.dim() {
        let op = grid.gradient_op(axis);
        let weighted: Vec<f64> = op.apply(&diff).iter().zip(&qw).map(|(g, w)| w * g).collect();
        for (out, v) in grad.iter_mut().zip(op.apply_transpose(&weighted, c.len())) {
            *out += config.alpha * v;
        }
    }
    Ok((0.5 * config.alpha * h1_norm_sq(&diff, grid)?, grad))
}

fn require_feasible(c: &[f64], grid: &Grid, config: &InverseConfig) -> Result<()> {
    grid.check_len(c, "conductivity")?;
    if let Some(i) = c.iter().position(|&v| !(v >= config.c_min)) {
        return Err(LabError::Precondition(format!(
            "conductivity {} at node {i} is below c_min = {}",
            c[i], config.c_min
        )));
    }
    Ok(())
}

/// `J(c) = 1/2 ||trace(c) - d||^2 + alpha/2 ||c - prior||^2_{H^1}`.
pub fn misfit(c: &[f64], data: &ObservationSet, setup: &Setup, config: &InverseConfig) -> Result<f64> {
    require_feasible(c, &setup.grid, config)?;
    let (_, trace) = forward(setup, c)?;
    let (_, mis) = trace_residual(&trace, data, setup)?;
    Ok(mis + regularization(c, &setup.grid, config)?.0)
}

/// `J(c)` and its nodal gradient, zeroed on the two outer node rings.
///
/// The gradient is the exact derivative of the discrete misfit: the adjoint
/// runs the transposed Crank–Nicolson recursion backward in time.
pub fn misfit_and_gradient(
    c: &[f64],
    data: &ObservationSet,
    setup: &Setup,
    config: &InverseConfig,
) -> Result<(f64, ScalarField)> {
    let grid = &setup.grid;
    require_feasible(c, grid, config)?;
    let (q, trace) = forward(setup, c)?;
    let (residual, mis) = trace_residual(&trace, data, setup)?;
    let (reg, mut grad) = regularization(c, grid, config)?;

    let stepper = CnStepper::new(grid, c, setup.full.dt())?;
    let lambda = adjoint_states(&stepper, &q, &residual, setup)?;
    accumulate_coefficient_gradient(&mut grad, &q, &lambda, &stepper, grid);
    project_admissible(grid, &mut grad);
    Ok((mis + reg, grad))
}

/// Adjoint states `mu^k` (interior unknowns) for `k = 1..=K`; index 0 is unused.
fn adjoint_states(
    stepper: &CnStepper,
    q: &SpaceTimeField,
    residual: &[Vec<f64>],
    setup: &Setup,
) -> Result<Vec<Vec<f64>>> {
    let grid = &setup.grid;
    let steps = q.num_slices() - 1;
    let lead = q.window_offset(&setup.window)?;
    let m = stepper.interior().len();
    let inv_2dt = 0.5 / setup.full.dt();

    // d(misfit)/d(x^k): the trace at window node i differences slices lead+i+-1
    let mut source = vec![vec![0.0; m]; steps + 1];
    for (&node, row) in grid.gamma0_nodes().iter().zip(residual) {
        let stencil = grid
            .normal_derivative_row(node)
            .expect("observation nodes lie on the boundary");
        for (j, r) in row.iter().enumerate() {
            let k = lead + j + 1;
            for &(col, a) in &stencil {
                if let Some(p) = stepper.position(col) {
                    source[k + 1][p] += r * a * inv_2dt;
                    if k > 1 {
                        source[k - 1][p] -= r * a * inv_2dt;
                    }
                }
            }
        }
    }

    let mut mu = vec![Vec::new(); steps + 1];
    let mut next = vec![0.0; m];
    for k in (1..=steps).rev() {
        let b_next = stepper.apply_b(&next);
        let rhs: Vec<f64> = b_next.iter().zip(&source[k]).map(|(b, s)| b - s).collect();
        let cur = stepper.solve_a(&rhs, Some(&next))?;
        if let Some(p) = cur.iter().position(|v| !v.is_finite()) {
            return Err(LabError::non_finite("adjoint state", stepper.interior()[p]));
        }
        mu[k] = cur.clone();
        next = cur;
    }
    Ok(mu)
}

/// Adds `sum_k (mu^{k+1})^T dR^{k+1}/dc`, where the step residual is
/// `x^{k+1} - x^k - dt/2 [L(c) (q^k + q^{k+1})]_I` and `L(c)` couples nodes
/// through edge means `(c_a + c_b) / 2`.
fn accumulate_coefficient_gradient(
    grad: &mut [f64],
    q: &SpaceTimeField,
    mu: &[Vec<f64>],
    stepper: &CnStepper,
    grid: &Grid,
) {
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let factor = -0.25 * stepper.dt() * inv_h2;
    let mut full_mu = vec![0.0; grid.num_nodes()];
    let strides: Vec<usize> = (0..grid.dim()).map(|a| if a == 0 { 1 } else { n + 1 }).collect();
    for k in 0..q.num_slices() - 1 {
        for (p, &node) in stepper.interior().iter().enumerate() {
            full_mu[node] = mu[k + 1][p];
        }
        let (cur, nxt) = (q.slice(k), q.slice(k + 1));
        for a in 0..grid.num_nodes() {
            for (axis, &s) in strides.iter().enumerate() {
                if grid.axis_index(a, axis) == n {
                    continue;
                }
                let b = a + s;
                let dmu = full_mu[a] - full_mu[b];
                if dmu == 0.0 {
                    continue;
                }
                let dv = (nxt[b] + cur[b]) - (nxt[a] + cur[a]);
                let contrib = factor * dv * dmu;
                grad[a] += contrib;
                grad[b] += contrib;
            }
        }
    }
}

/// One Crank–Nicolson update `A^{-1} B` on interior unknowns and its transpose `B A^{-1}`.
pub fn step_operator(stepper: &CnStepper, x: &[f64]) -> Result<Vec<f64>> {
    stepper.solve_a(&stepper.apply_b(x), None)
}

pub fn step_operator_transpose(stepper: &CnStepper, y: &[f64]) -> Result<Vec<f64>> {
    Ok(stepper.apply_b(&stepper.solve_a(y, None)?))
}

/// `h^d (I - smoothing * Laplacian)` on the nodes off the two outer rings.
struct Preconditioner {
    free: Vec<usize>,
    op: SparseOp,
    vol: f64,
    order: usize,
}

impl Preconditioner {
    fn new(grid: &Grid, smoothing: f64, order: usize) -> Self {
        let layer = grid.boundary_layer(2);
        let free: Vec<usize> = (0..grid.num_nodes()).filter(|&i| !layer[i]).collect();
        let mut pos = vec![usize::MAX; grid.num_nodes()];
        for (k, &i) in free.iter().enumerate() {
            pos[i] = k;
        }
        let lap = grid.laplacian_op();
        let vol = grid.h().powi(grid.dim() as i32);
        let rows = free
            .iter()
            .map(|&i| {
                let mut row: Vec<(usize, f64)> = lap
                    .row(i)
                    .filter(|&(j, _)| pos[j] != usize::MAX)
                    .map(|(j, a)| (pos[j], -vol * smoothing * a))
                    .collect();
                row.push((pos[i], vol));
                row
            })
            .collect();
        Preconditioner {
            free,
            op: SparseOp::from_rows(rows),
            vol,
            order,
        }
    }

    /// `M^{-1} g` on the free nodes, zero elsewhere.
    fn solve(&self, g: &[f64]) -> Result<Vec<f64>> {
        let mut z: Vec<f64> = self.free.iter().map(|&i| g[i]).collect();
        for pass in 0..self.order {
            let scale = if pass == 0 { 1.0 } else { self.vol };
            let rhs: Vec<f64> = z.iter().map(|v| scale * v).collect();
            z = conjugate_gradient(&self.op, &rhs, None, 1e-13, 20 * rhs.len().max(1))?.0;
        }
        let mut out = vec![0.0; g.len()];
        for (&i, v) in self.free.iter().zip(z) {
            out[i] = v;
        }
        Ok(out)
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut sub: Vec<f64> = self.free.iter().map(|&i| v[i]).collect();
        for pass in 0..self.order {
            let scale = if pass == 0 { 1.0 } else { 1.0 / self.vol };
            sub = self.op.apply(&sub).into_iter().map(|x| scale * x).collect();
        }
        let mut out = vec![0.0; v.len()];
        for (&i, x) in self.free.iter().zip(sub) {
            out[i] = x;
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub misfit: f64,
    /// `sqrt(g^T M^{-1} g)`, the gradient norm in the preconditioner metric.
    pub grad_norm: f64,
    /// Relative `H^1` error against the truth, when one was supplied.
    pub h1_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub c: ScalarField,
    pub log: Vec<IterationLog>,
    pub converged: bool,
}

impl Reconstruction {
    pub fn final_h1_error(&self) -> Option<f64> {
        self.log.last().and_then(|l| l.h1_error)
    }

    /// Rows `iter,J,grad_norm,h1_error`; the error column is empty without a truth.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,J,grad_norm,h1_error")?;
        for l in &self.log {
            let err = l.h1_error.map(fmt_value).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{err}",
                l.iter,
                fmt_value(l.misfit),
                fmt_value(l.grad_norm)
            )?;
        }
        Ok(())
    }
}

/// `||c - truth||_{H^1} / ||truth - prior||_{H^1}`.
pub fn relative_h1_error(c: &[f64], truth: &[f64], prior: &[f64], grid: &Grid) -> Result<f64> {
    let err: Vec<f64> = c.iter().zip(truth).map(|(a, b)| a - b).collect();
    let scale: Vec<f64> = truth.iter().zip(prior).map(|(a, b)| a - b).collect();
    let denom = h1_norm_sq(&scale, grid)?;
    let num = h1_norm_sq(&err, grid)?;
    Ok(if denom == 0.0 { num.sqrt() } else { (num / denom).sqrt() })
}

/// Projected, preconditioned gradient descent from the prior with
/// Barzilai–Borwein trial steps and Armijo backtracking.
pub fn reconstruct(
    data: &ObservationSet,
    setup: &Setup,
    config: &InverseConfig,
    truth: Option<&[f64]>,
) -> Result<Reconstruction> {
    let grid = &setup.grid;
    config.validate(grid)?;
    let precond = Preconditioner::new(grid, config.smoothing, config.metric_order);
    let feasible = |c: Vec<f64>| -> Vec<f64> { c.into_iter().map(|v| v.max(config.c_min)).collect() };
    let error_of = |c: &[f64]| -> Result<Option<f64>> {
        truth
            .map(|t| relative_h1_error(c, t, &config.prior, grid))
            .transpose()
    };

    let mut c = feasible(config.prior.clone());
    let (mut j, mut g) = misfit_and_gradient(&c, data, setup, config)?;
    let mut dir = precond.solve(&g)?;
    let mut grad_norm = dot(&g, &dir).max(0.0).sqrt();
    let initial_norm = grad_norm;
    let mut log = vec![IterationLog {
        iter: 0,
        misfit: j,
        grad_norm,
        h1_error: error_of(&c)?,
    }];
    // first trial step moves c by at most 1% of its size
    let dir_max = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c_max = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if dir_max > 0.0 { 0.01 * c_max / dir_max } else { 1.0 };
    let mut stalled = 0;
    let mut converged = grad_norm == 0.0;
    // nonmonotone Armijo reference: the largest of the last few accepted J values
    let mut recent = std::collections::VecDeque::from([j]);

    for iter in 1..=config.max_iter {
        if converged || grad_norm <= config.grad_tol * initial_norm {
            converged = true;
            break;
        }
        let mut tau = step;
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            let trial = feasible(c.iter().zip(&dir).map(|(x, d)| x - tau * d).collect());
            let s: Vec<f64> = trial.iter().zip(&c).map(|(a, b)| a - b).collect();
            let j_trial = misfit(&trial, data, setup, config)?;
            if j_trial <= reference + config.armijo * dot(&g, &s) {
                accepted = Some((trial, s, j_trial));
                break;
            }
            tau *= config.shrink;
        }
        let Some((trial, s, j_new)) = accepted else {
            return Err(LabError::LineSearch(format!(
                "no sufficient decrease after {} halvings at iteration {iter} (J = {j:e})",
                config.max_backtracks
            )));
        };
        let (_, g_new) = misfit_and_gradient(&trial, data, setup, config)?;
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let long = {
            let sms = dot(&s, &precond.apply(&s));
            (sms > 0.0).then(|| sms / sy)
        };
        let short = || -> Result<Option<f64>> {
            let ymy = dot(&y, &precond.solve(&y)?);
            Ok((ymy > 0.0).then(|| sy / ymy))
        };
        let candidate = match config.step_rule {
            StepRule::Long => long,
            StepRule::Short => short()?,
            StepRule::Alternating if iter % 2 == 1 => long,
            StepRule::Alternating => short()?,
        };
        step = match candidate {
            Some(v) if sy > 0.0 => v,
            _ => 2.0 * tau,
        };

        stalled = if j_new >= j { stalled + 1 } else { 0 };
        if stalled >= 10 {
            return Err(LabError::Stalled(format!(
                "J did not decrease over 10 accepted steps (J = {j_new:e})"
            )));
        }
        recent.push_back(j_new);
        if recent.len() > config.memory {
            recent.pop_front();
        }
        c = trial;
        j = j_new;
        g = g_new;
        dir = precond.solve(&g)?;
        grad_norm = dot(&g, &dir).max(0.0).sqrt();
        converged = grad_norm == 0.0;
        log.push(IterationLog {
            iter,
            misfit: j,
            grad_norm,
            h1_error: error_of(&c)?,
        });
    }
    if !converged && grad_norm <= config.grad_tol * initial_norm {
        converged = true;
    }
    Ok(Reconstruction { c, log, converged })
}
