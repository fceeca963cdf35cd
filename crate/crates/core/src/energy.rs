//! Weighted energy of `y = d_t (q - q_ref)`, the snapshot bound at `T'` and
//! the energy estimate.

use std::io::Write;

use crate::error::{LabError, Result};
use crate::experiment::{Setup, TwinSolve};
use crate::forward::SpaceTimeField;
use crate::grid::{discrete_gradient, Grid, ScalarField};
use crate::logspace::{log_sum_exp, LogScalar};
use crate::observe::{
    flux_trace, weighted_boundary_norm, weighted_integral_spacetime, weighted_norm_space,
    weighted_norm_space_vec,
};
use crate::report::{fmt_value, EstimateReport, ReportParams, Term};
use crate::weights::WeightSet;

/// Largest boundary value of `y` accepted as zero.
pub const TRACE_TOL: f64 = 1e-10;

/// `E(t) = int c phi^{-1} e^{-2 s eta} |grad y|^2` on the interior window nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyCurve {
    pub times: Vec<f64>,
    /// `values[i - 1]` belongs to window node `i`.
    pub values: Vec<LogScalar>,
    pub s: f64,
    pub lambda: f64,
    pub at_midpoint: LogScalar,
}

impl EnergyCurve {
    /// `E` at a window node; 0 at the window ends.
    pub fn at(&self, i: usize) -> LogScalar {
        if i == 0 || i > self.values.len() {
            LogScalar::ZERO
        } else {
            self.values[i - 1]
        }
    }

    /// Rows `t,E,ln_E`; `E` underflows to 0 for realistic weights, `ln_E` does not.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,E,ln_E")?;
        for (t, e) in self.times.iter().zip(&self.values) {
            writeln!(
                out,
                "{},{},{}",
                fmt_value(*t),
                fmt_value(e.value()),
                fmt_value(e.ln())
            )?;
        }
        Ok(())
    }
}

fn require_zero_trace(y: &[ScalarField], grid: &Grid) -> Result<()> {
    for (i, slice) in y.iter().enumerate() {
        grid.check_len(slice, "y slice")?;
        for b in grid.boundary_nodes() {
            if slice[b].abs() > TRACE_TOL {
                return Err(LabError::Precondition(format!(
                    "y = {} on the boundary at node {b}, slice {i}",
                    slice[b]
                )));
            }
        }
    }
    Ok(())
}

/// Energy curve of `y`, given one slice per window node.
pub fn energy(y: &[ScalarField], c: &[f64], grid: &Grid, weights: &WeightSet) -> Result<EnergyCurve> {
    let tg = *weights.timegrid();
    if y.len() != tg.steps() + 1 {
        return Err(LabError::Precondition(format!(
            "{} slices of y for a window with {} nodes",
            y.len(),
            tg.steps() + 1
        )));
    }
    grid.check_len(c, "conductivity")?;
    require_zero_trace(y, grid)?;
    let qw = grid.quadrature_weights();
    let mut values = Vec::with_capacity(tg.steps() - 1);
    for (i, slice) in y.iter().enumerate().take(tg.steps()).skip(1) {
        let grad_sq = discrete_gradient(slice, grid).sq_norm();
        let mut terms = Vec::with_capacity(grid.num_nodes());
        for node in 0..grid.num_nodes() {
            let density = c[node] * grad_sq[node];
            if !density.is_finite() {
                return Err(LabError::non_finite(format!("energy density on slice {i}"), node));
            }
            terms.push(qw[node].ln() + density.ln() + weights.ln_weight(i, node, -1));
        }
        values.push(LogScalar::new(weights.shift(), log_sum_exp(terms)));
    }
    let mid = tg.midpoint_index();
    Ok(EnergyCurve {
        times: (1..tg.steps()).map(|i| tg.time(i)).collect(),
        at_midpoint: values[mid - 1],
        values,
        s: weights.s(),
        lambda: weights.lambda(),
    })
}

/// `E(T')` through the weighted vector norm of `sqrt(c) grad y(T')`.
pub fn energy_at_midpoint(y_mid: &[f64], c: &[f64], grid: &Grid, weights: &WeightSet) -> Result<LogScalar> {
    let mut grad = discrete_gradient(y_mid, grid);
    for comp in &mut grad.comps {
        for (v, cv) in comp.iter_mut().zip(c) {
            *v *= cv.sqrt();
        }
    }
    weighted_norm_space_vec(&grad, grid, weights, -1)
}

fn params(grid: &Grid, weights: &WeightSet) -> ReportParams {
    ReportParams {
        s: weights.s(),
        lambda: weights.lambda(),
        dim: grid.dim(),
        n: grid.n(),
        steps: weights.timegrid().steps(),
    }
}

/// `iint e^{-2 s eta} (|gamma|^2 + |grad gamma|^2)` for a time-independent `gamma`.
fn coefficient_norm(gamma: &[f64], grid: &Grid, weights: &WeightSet) -> Result<LogScalar> {
    let grad_sq = discrete_gradient(gamma, grid).sq_norm();
    let density: Vec<f64> = gamma.iter().zip(&grad_sq).map(|(g, d)| g * g + d).collect();
    let slices = vec![density; weights.timegrid().steps() + 1];
    weighted_integral_spacetime(&slices, grid, weights, 0)
}

/// `y` on the window with its boundary flux.
struct Inputs {
    slices: Vec<ScalarField>,
    trace: Vec<Vec<f64>>,
}

fn inputs(y: &SpaceTimeField, grid: &Grid, weights: &WeightSet) -> Result<Inputs> {
    let window = weights.timegrid();
    let slices = y.window_slices(window)?.to_vec();
    require_zero_trace(&slices, grid)?;
    let trace = flux_trace(y, grid, window)?;
    Ok(Inputs { slices, trace })
}

/// Snapshot bound: `int e^{-2 s eta(T')} |y(T')|^2` against
/// `lambda^{1/2}` times the weighted boundary flux plus
/// `(s lambda)^{-1/2}` times the weighted coefficient norm.
pub fn snapshot_bound_sides(
    y: &SpaceTimeField,
    gamma: &[f64],
    grid: &Grid,
    weights: &WeightSet,
) -> Result<EstimateReport> {
    grid.check_len(gamma, "perturbation")?;
    let inp = inputs(y, grid, weights)?;
    let (s, lambda) = (weights.s(), weights.lambda());
    let mid = weights.timegrid().midpoint_index();
    let lhs = vec![Term::new(
        "y_at_midpoint",
        weighted_norm_space(&inp.slices[mid], grid, weights, 0)?,
    )];
    let rhs = vec![
        Term::new(
            "boundary",
            weighted_boundary_norm(&inp.trace, grid, weights, false)?.scale(lambda.sqrt()),
        ),
        Term::new(
            "coefficient",
            coefficient_norm(gamma, grid, weights)?.scale(1.0 / (s * lambda).sqrt()),
        ),
    ];
    Ok(EstimateReport::new("snapshot", lhs, rhs, params(grid, weights)))
}

/// Energy estimate: `E(T')` against `s lambda` times the weighted boundary
/// flux plus `s` times the weighted coefficient norm.
pub fn energy_bound_sides(
    y: &SpaceTimeField,
    c: &[f64],
    gamma: &[f64],
    grid: &Grid,
    weights: &WeightSet,
) -> Result<EstimateReport> {
    grid.check_len(gamma, "perturbation")?;
    let inp = inputs(y, grid, weights)?;
    let (s, lambda) = (weights.s(), weights.lambda());
    let curve = energy(&inp.slices, c, grid, weights)?;
    let lhs = vec![Term::new("energy_at_midpoint", curve.at_midpoint)];
    let rhs = vec![
        Term::new(
            "boundary",
            weighted_boundary_norm(&inp.trace, grid, weights, false)?.scale(s * lambda),
        ),
        Term::new(
            "coefficient",
            coefficient_norm(gamma, grid, weights)?.scale(s),
        ),
    ];
    Ok(EstimateReport::new("energy", lhs, rhs, params(grid, weights)))
}

/// `div(gamma grad d_t q_ref)` at `T'`, the forcing of the `y` equation.
pub fn forcing_at_midpoint(twin: &TwinSolve, setup: &Setup) -> Result<ScalarField> {
    let dq_ref = crate::forward::time_derivative(&twin.q_ref)?;
    let w = &setup.window;
    let slice = dq_ref.window_slice(w, w.midpoint_index())?;
    Ok(setup.grid.flux_div_op_any(&twin.gamma).apply(slice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{perturbation, twin_solve, Shape};
    use crate::grid::TimeGrid;
    use crate::weights::{build_weights, WeightParams};
    use std::f64::consts::PI;

    fn weights_for(setup: &Setup, lambda: f64, s: f64) -> WeightSet {
        build_weights(
            &setup.grid,
            &setup.window,
            WeightParams::new(lambda, s, 2.0, vec![-1.0]),
        )
        .unwrap()
    }

    fn bump_twin(setup: &Setup, eps: f64) -> TwinSolve {
        let c_ref = vec![1.0; setup.grid.num_nodes()];
        let c: Vec<f64> = perturbation(&setup.grid, eps, Shape::Plain)
            .iter()
            .map(|g| 1.0 + g)
            .collect();
        twin_solve(setup, &c, &c_ref).unwrap()
    }

    fn separable(setup: &Setup, amp: impl Fn(f64) -> f64) -> Vec<ScalarField> {
        let w: &TimeGrid = &setup.window;
        (0..=w.steps())
            .map(|i| {
                let a = amp(w.time(i));
                setup.grid.sample(|x| a * (PI * x[0]).sin())
            })
            .map(|mut f| {
                for b in setup.grid.boundary_nodes() {
                    f[b] = 0.0;
                }
                f
            })
            .collect()
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let w = weights_for(&setup, 1.0, 1.0);
        let y = vec![vec![0.0; 17]; setup.window.steps() + 1];
        let curve = energy(&y, &vec![1.0; 17], &setup.grid, &w).unwrap();
        assert!(curve.values.iter().all(LogScalar::is_zero));
    }

    #[test]
    fn energy_factorizes_over_time() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let w = weights_for(&setup, 1.0, 2.0);
        let c = vec![1.0; 17];
        let unit = separable(&setup, |_| 1.0);
        let amp = |t: f64| 1.0 + t * t;
        let y = separable(&setup, amp);
        let g = energy(&unit, &c, &setup.grid, &w).unwrap();
        let e = energy(&y, &c, &setup.grid, &w).unwrap();
        for i in 1..setup.window.steps() {
            let a = amp(setup.window.time(i));
            let expected = (a * a).ln();
            // logs reach ~1e9 near the window ends, so compare relative to them
            let err = (e.at(i).ln_ratio(&g.at(i)) - expected).abs();
            assert!(err <= 1e-14 * (1.0 + g.at(i).ln_rel().abs()), "node {i}: {err:e}");
        }
    }

    #[test]
    fn energy_is_nonnegative_and_decays_at_the_ends() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let twin = bump_twin(&setup, 0.05);
        for s in [4.0, 8.0] {
            let w = weights_for(&setup, 1.0, s);
            let curve = energy(&twin.y_window(&setup).unwrap(), &twin.c, &setup.grid, &w).unwrap();
            assert!(curve.values.iter().all(|v| v.ln() >= f64::NEG_INFINITY && !v.ln().is_nan()));
            let first = curve.at(1).ln_ratio(&curve.at_midpoint);
            let last = curve.at(setup.window.steps() - 1).ln_ratio(&curve.at_midpoint);
            assert!(first < 1e-6f64.ln() && last < 1e-6f64.ln(), "{first} {last}");
        }
    }

    #[test]
    fn two_paths_to_the_midpoint_energy_agree() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let twin = bump_twin(&setup, 0.05);
        let w = weights_for(&setup, 1.0, 4.0);
        let y = twin.y_window(&setup).unwrap();
        let curve = energy(&y, &twin.c, &setup.grid, &w).unwrap();
        let mid = setup.window.midpoint_index();
        let direct = energy_at_midpoint(&y[mid], &twin.c, &setup.grid, &w).unwrap();
        assert!(curve.at_midpoint.ln_ratio(&direct).abs() <= 1e-12);
    }

    #[test]
    fn boundary_values_are_rejected() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let w = weights_for(&setup, 1.0, 1.0);
        let mut y = vec![vec![0.0; 17]; setup.window.steps() + 1];
        y[3][16] = 1e-9;
        assert!(energy(&y, &vec![1.0; 17], &setup.grid, &w).is_err());
    }

    #[test]
    fn identical_coefficients_give_empty_bounds() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let w = weights_for(&setup, 1.0, 1.0);
        let twin = bump_twin(&setup, 0.0);
        let snap = snapshot_bound_sides(&twin.y, &twin.gamma, &setup.grid, &w).unwrap();
        let en = energy_bound_sides(&twin.y, &twin.c, &twin.gamma, &setup.grid, &w).unwrap();
        assert!(snap.is_zero() && en.is_zero());
        assert_eq!(en.ratio, 0.0);
    }

    #[test]
    fn default_perturbation_gives_finite_ratios() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let twin = bump_twin(&setup, 0.05);
        let mut snapshot_ln = Vec::new();
        for s in [4.0, 8.0] {
            let w = weights_for(&setup, 1.0, s);
            let snap = snapshot_bound_sides(&twin.y, &twin.gamma, &setup.grid, &w).unwrap();
            let en = energy_bound_sides(&twin.y, &twin.c, &twin.gamma, &setup.grid, &w).unwrap();
            assert!(snap.ln_ratio.is_finite() && en.ln_ratio.is_finite());
            snapshot_ln.push(snap.ln_ratio);
        }
        assert!(snapshot_ln[1] <= snapshot_ln[0] + 1.1f64.ln(), "{snapshot_ln:?}");
    }

    #[test]
    fn energy_ratio_is_stable_under_refinement() {
        let ratio = |n: usize| {
            let setup = Setup::reference_1d(n, 4 * n).unwrap();
            let twin = bump_twin(&setup, 0.05);
            let w = weights_for(&setup, 1.0, 4.0);
            energy_bound_sides(&twin.y, &twin.c, &twin.gamma, &setup.grid, &w)
                .unwrap()
                .ln_ratio
        };
        let (coarse, fine) = (ratio(32), ratio(64));
        assert!((fine - coarse).abs() < 1.2f64.ln(), "{coarse} {fine}");
    }

    #[test]
    fn midpoint_energy_is_quadratic_in_small_perturbations() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let w = weights_for(&setup, 1.0, 4.0);
        for eps in [0.01, 0.025] {
            let e = |amp: f64| {
                let twin = bump_twin(&setup, amp);
                let y = twin.y_window(&setup).unwrap();
                energy(&y, &twin.c, &setup.grid, &w).unwrap().at_midpoint
            };
            let factor = e(2.0 * eps).ratio(&e(eps));
            assert!((factor / 4.0 - 1.0).abs() < 0.15, "eps {eps}: {factor}");
        }
    }

    #[test]
    fn forcing_is_finite() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let twin = bump_twin(&setup, 0.05);
        let f = forcing_at_midpoint(&twin, &setup).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
        assert!(f.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn curve_csv_has_one_row_per_interior_node() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let twin = bump_twin(&setup, 0.05);
        let w = weights_for(&setup, 1.0, 1.0);
        let curve = energy(&twin.y_window(&setup).unwrap(), &twin.c, &setup.grid, &w).unwrap();
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), setup.window.steps());
        assert!(text.starts_with("t,E,ln_E\n"));
    }
}
