//! The first-order operator `P0 g = grad(b) . grad(g)`, the weighted
//! Poincaré-type lemma, the coefficient proposition and the identity linking
//! `y(T')` to `gamma`.

use std::io::Write;

use crate::error::{LabError, Result};
use crate::experiment::{Setup, TwinSolve};
use crate::forward::Snapshot;
use crate::grid::{discrete_gradient, quadrature_space, Grid, ScalarField, VectorField};
use crate::logspace::{pow2_exponent, scale_pow2};
use crate::observe::{weighted_norm_space, weighted_norm_space_vec};
use crate::report::{write_parts_csv, EstimateReport, ReportParams, Term};
use crate::weights::WeightSet;

/// Threshold below which `|grad(beta) . grad(b)|` counts as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// A base field `b` with its gradient and the transport speed `grad(beta) . grad(b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportBase {
    pub field: ScalarField,
    pub grad: VectorField,
    pub transport: Vec<f64>,
    /// Nodal minimum of `|grad(beta) . grad(b)|` over the whole closed domain.
    pub min_transport: f64,
}

impl TransportBase {
    pub fn new(field: &[f64], grid: &Grid, weights: &WeightSet) -> Result<Self> {
        grid.check_len(field, "base field")?;
        let grad = discrete_gradient(field, grid);
        let transport = weights.grad_beta.dot(&grad);
        let min_transport = transport.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        Ok(TransportBase {
            field: field.to_vec(),
            grad,
            transport,
            min_transport,
        })
    }

    /// Minimum of `|grad(beta) . grad(b)|` over the closed support of `g`
    /// (nonzero nodes and their axis neighbours); `+inf` for `g = 0`.
    pub fn min_on_support(&self, g: &[f64], grid: &Grid) -> f64 {
        let mut min = f64::INFINITY;
        for node in 0..grid.num_nodes() {
            if support_closure_contains(g, grid, node) {
                min = min.min(self.transport[node].abs());
            }
        }
        min
    }

    /// Rejects a base whose transport speed vanishes where `g` lives.
    pub fn require_nondegenerate(&self, g: &[f64], grid: &Grid) -> Result<()> {
        let min = self.min_on_support(g, grid);
        if min <= DEGENERACY_TOL {
            return Err(LabError::Degenerate(format!(
                "min |grad(beta) . grad(base)| on the support is {min:e}"
            )));
        }
        Ok(())
    }
}

fn support_closure_contains(g: &[f64], grid: &Grid, node: usize) -> bool {
    if g[node] != 0.0 {
        return true;
    }
    let n = grid.n();
    let step = |axis: usize| if axis == 0 { 1 } else { n + 1 };
    (0..grid.dim()).any(|axis| {
        let p = grid.axis_index(node, axis);
        let s = step(axis);
        (p > 0 && g[node - s] != 0.0) || (p < n && g[node + s] != 0.0)
    })
}

fn require_zero_trace(g: &[f64], grid: &Grid, what: &str) -> Result<()> {
    grid.check_len(g, what)?;
    for b in grid.boundary_nodes() {
        if g[b] != 0.0 {
            return Err(LabError::Precondition(format!(
                "{what} must vanish on the boundary, got {} at node {b}",
                g[b]
            )));
        }
    }
    Ok(())
}

/// `P0 g = grad(b) . grad(g)` at every node.
pub fn apply_p0(g: &[f64], base: &TransportBase, grid: &Grid) -> Result<ScalarField> {
    require_zero_trace(g, grid, "test function")?;
    Ok(base.grad.dot(&discrete_gradient(g, grid)))
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

fn rescaled(terms: Vec<Term>, e: i32) -> Vec<Term> {
    terms
        .into_iter()
        .map(|t| Term::new(t.name, t.value.with_pow2(2 * e)))
        .collect()
}

fn scale_vec_exact(field: &VectorField, e: i32) -> VectorField {
    VectorField {
        comps: field.comps.iter().map(|c| scale_pow2(c, e)).collect(),
    }
}

/// Both sides of the weighted Poincaré-type lemma at `T'`:
/// `s^2 lambda^2 int e^{-2 s eta} phi |g|^2` against `int e^{-2 s eta} phi^{-1} |P0 g|^2`.
pub fn lemma_sides(
    g: &[f64],
    base: &TransportBase,
    grid: &Grid,
    weights: &WeightSet,
) -> Result<EstimateReport> {
    require_zero_trace(g, grid, "test function")?;
    base.require_nondegenerate(g, grid)?;
    let e = pow2_exponent(g);
    let g = scale_pow2(g, e);
    let (s, lambda) = (weights.s(), weights.lambda());
    let p0g = apply_p0(&g, base, grid)?;
    let lhs = vec![Term::new(
        "weighted_l2",
        weighted_norm_space(&g, grid, weights, 1)?.scale(s * s * lambda * lambda),
    )];
    let rhs = vec![Term::new("transport", weighted_norm_space(&p0g, grid, weights, -1)?)];
    Ok(EstimateReport::new(
        "poincare_lemma",
        rescaled(lhs, e),
        rescaled(rhs, e),
        params(grid, weights),
    ))
}

/// `y(T') - div(gamma grad q_ref(T')) - div(c grad u(T'))` at every node.
pub fn cit_residual(
    gamma: &[f64],
    c: &[f64],
    base: &[f64],
    u: &[f64],
    y: &[f64],
    grid: &Grid,
) -> Result<ScalarField> {
    for (f, what) in [(gamma, "perturbation"), (base, "base"), (u, "u"), (y, "y")] {
        grid.check_len(f, what)?;
    }
    let forcing = grid.flux_div_op_any(gamma).apply(base);
    let transport = grid.flux_div_op(c)?.apply(u);
    Ok(y
        .iter()
        .zip(forcing.iter().zip(&transport))
        .map(|(yv, (f, t))| yv - f - t)
        .collect())
}

pub fn cit_residual_of_twin(twin: &TwinSolve, setup: &Setup) -> Result<ScalarField> {
    let mid = setup.window.midpoint_index();
    let w = &setup.window;
    cit_residual(
        &twin.gamma,
        &twin.c,
        twin.q_ref.window_slice(w, mid)?,
        twin.u.window_slice(w, mid)?,
        twin.y.window_slice(w, mid)?,
        &setup.grid,
    )
}

/// The proposition split into its `|gamma|^2` part, its `|grad gamma|^2`
/// part and their sum, all against the same right-hand side.
#[derive(Clone, Debug, PartialEq)]
pub struct PropositionReport {
    pub scalar: EstimateReport,
    pub gradient: EstimateReport,
    pub combined: EstimateReport,
}

impl PropositionReport {
    pub fn parts(&self) -> [(&'static str, &EstimateReport); 3] {
        [
            ("scalar", &self.scalar),
            ("gradient", &self.gradient),
            ("combined", &self.combined),
        ]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_parts_csv(&self.parts(), out)
    }
}

/// Both sides of the coefficient proposition at `T'`.
///
/// `u` and `y` are snapshots of `q - q_ref` and its time derivative, and
/// `base` is built from `q_ref(T')`.
pub fn proposition_sides(
    gamma: &[f64],
    base: &TransportBase,
    u: &Snapshot,
    y: &Snapshot,
    grid: &Grid,
    weights: &WeightSet,
) -> Result<PropositionReport> {
    require_zero_trace(gamma, grid, "perturbation")?;
    base.require_nondegenerate(gamma, grid)?;
    // one common exponent keeps the report bitwise homogeneous in (gamma, u, y)
    let e = pow2_exponent(gamma);
    let gamma = scale_pow2(gamma, e);
    let (s, lambda) = (weights.s(), weights.lambda());
    let factor = s * s * lambda * lambda;
    let grad_gamma = discrete_gradient(&gamma, grid);

    let rhs = vec![
        Term::new("y", weighted_norm_space(&scale_pow2(&y.q, e), grid, weights, -1)?),
        Term::new(
            "grad_y",
            weighted_norm_space_vec(&scale_vec_exact(&y.grad, e), grid, weights, -1)?,
        ),
        Term::new(
            "grad_lap_u",
            weighted_norm_space_vec(&scale_vec_exact(&u.grad_lap, e), grid, weights, 0)?,
        ),
        Term::new("lap_u", weighted_norm_space(&scale_pow2(&u.lap, e), grid, weights, 0)?),
        Term::new(
            "grad_u",
            weighted_norm_space_vec(&scale_vec_exact(&u.grad, e), grid, weights, 0)?,
        ),
    ];
    let scalar = Term::new(
        "gamma",
        weighted_norm_space(&gamma, grid, weights, 1)?.scale(factor),
    );
    let gradient = Term::new(
        "grad_gamma",
        weighted_norm_space_vec(&grad_gamma, grid, weights, 1)?.scale(factor),
    );
    let p = params(grid, weights);
    let report = |label: &str, lhs: Vec<Term>| {
        EstimateReport::new(label, rescaled(lhs, e), rescaled(rhs.clone(), e), p)
    };
    Ok(PropositionReport {
        scalar: report("proposition_scalar", vec![scalar.clone()]),
        gradient: report("proposition_gradient", vec![gradient.clone()]),
        combined: report("proposition", vec![scalar, gradient]),
    })
}

pub fn proposition_of_twin(
    twin: &TwinSolve,
    setup: &Setup,
    weights: &WeightSet,
) -> Result<PropositionReport> {
    let base_snap = twin.base_snapshot(setup)?;
    let base = TransportBase::new(&base_snap.q, &setup.grid, weights)?;
    proposition_sides(
        &twin.gamma,
        &base,
        &twin.u_snapshot(setup)?,
        &twin.y_snapshot(setup)?,
        &setup.grid,
        weights,
    )
}

/// `ln` of `s^2 lambda^2 e^{-2 s max eta(T')} min phi(T') |gamma|^2_{H^1_0}`,
/// a lower bound for the proposition's left-hand side.
pub fn ln_lhs_lower_bound(gamma: &[f64], grid: &Grid, weights: &WeightSet) -> Result<f64> {
    let (s, lambda) = (weights.s(), weights.lambda());
    let mid = weights.midpoint();
    let min_phi = mid.phi.iter().copied().fold(f64::INFINITY, f64::min);
    let sq: Vec<f64> = gamma.iter().map(|v| v * v).collect();
    let plain = quadrature_space(&sq, grid)?
        + quadrature_space(&discrete_gradient(gamma, grid).sq_norm(), grid)?;
    Ok((s * s * lambda * lambda).ln() - 2.0 * s * weights.max_eta_at_midpoint()
        + min_phi.ln()
        + plain.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{perturbation, twin_solve, Shape};
    use crate::forward::{solve_heat, HeatProblem, Positivity};
    use crate::grid::{build_grid, Face};
    use crate::weights::{build_weights, WeightParams};
    use std::f64::consts::PI;

    fn weights_for(setup: &Setup, lambda: f64, s: f64) -> WeightSet {
        let anchor = if setup.grid.dim() == 1 {
            vec![-1.0]
        } else {
            vec![-1.0, 0.5]
        };
        build_weights(
            &setup.grid,
            &setup.window,
            WeightParams::new(lambda, s, 2.0, anchor),
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

    #[test]
    fn p0_is_exact_on_quadratics() {
        let g = build_grid(1, 16, &[Face::East]).unwrap();
        let setup = Setup::reference_1d(16, 64).unwrap();
        let w = weights_for(&setup, 1.0, 1.0);
        let base = TransportBase::new(&g.sample(|x| x[0]), &g, &w).unwrap();
        let test = g.sample(|x| x[0] * (1.0 - x[0]));
        let p0 = apply_p0(&test, &base, &g).unwrap();
        for i in 0..g.num_nodes() {
            let x = g.coord(i)[0];
            assert!((p0[i] - (1.0 - 2.0 * x)).abs() < 1e-12, "node {i}");
        }
        assert!(apply_p0(&vec![0.0; 17], &base, &g).unwrap().iter().all(|v| *v == 0.0));
        let bad = g.sample(|x| x[0]);
        assert!(apply_p0(&bad, &base, &g).is_err());
    }

    #[test]
    fn p0_converges_in_2d() {
        let err = |n: usize| {
            let setup = Setup::new(2, n, &[Face::East], 0.5, 2.0, 64).unwrap();
            let g = &setup.grid;
            let w = weights_for(&setup, 1.0, 1.0);
            let base = TransportBase::new(&g.sample(|x| x[0]), g, &w).unwrap();
            let mut test = g.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
            for b in g.boundary_nodes() {
                test[b] = 0.0;
            }
            let p0 = apply_p0(&test, &base, g).unwrap();
            (0..g.num_nodes())
                .filter(|&i| !g.is_boundary(i))
                .map(|i| {
                    let [x, y] = g.coord(i);
                    (p0[i] - PI * (PI * x).cos() * (PI * y).sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(16), err(32));
        assert!((e1 / e2).log2() > 1.8, "{e1} {e2}");
    }

    #[test]
    fn lemma_sides_zero_and_homogeneous() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let g = &setup.grid;
        let w = weights_for(&setup, 1.0, 4.0);
        let base = TransportBase::new(&g.sample(|x| x[0]), g, &w).unwrap();
        let zero = lemma_sides(&vec![0.0; 33], &base, g, &w).unwrap();
        assert!(zero.is_zero());
        assert_eq!(zero.ratio, 0.0);

        let test = g.sample(|x| x[0] * (1.0 - x[0]));
        let r1 = lemma_sides(&test, &base, g, &w).unwrap();
        let doubled: Vec<f64> = test.iter().map(|v| 2.0 * v).collect();
        let r2 = lemma_sides(&doubled, &base, g, &w).unwrap();
        assert!(r1.ln_ratio.is_finite());
        assert_eq!(r1.ln_ratio, r2.ln_ratio);
        assert_eq!(r2.lhs_total.ln_ratio(&r1.lhs_total), 4f64.ln());
    }

    #[test]
    fn lemma_ratio_stays_bounded_in_s() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let g = &setup.grid;
        let test = g.sample(|x| x[0] * (1.0 - x[0]));
        let ratios: Vec<f64> = [2.0, 4.0, 8.0]
            .iter()
            .map(|&s| {
                let w = weights_for(&setup, 1.0, s);
                let base = TransportBase::new(&g.sample(|x| x[0]), g, &w).unwrap();
                lemma_sides(&test, &base, g, &w).unwrap().ln_ratio
            })
            .collect();
        assert!(ratios.iter().all(|r| r.is_finite()));
        assert!(ratios[2] <= ratios[0] + 1e-9, "{ratios:?}");
    }

    #[test]
    fn degenerate_base_is_rejected() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let g = &setup.grid;
        let w = weights_for(&setup, 1.0, 1.0);
        let flat = TransportBase::new(&vec![3.0; 17], g, &w).unwrap();
        let test = g.sample(|x| x[0] * (1.0 - x[0]));
        assert!(matches!(
            lemma_sides(&test, &flat, g, &w),
            Err(LabError::Degenerate(_))
        ));
    }

    #[test]
    fn reference_state_satisfies_transport_condition() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let w = weights_for(&setup, 1.0, 1.0);
        let twin = bump_twin(&setup, 0.05);
        let snap = twin.base_snapshot(&setup).unwrap();
        let base = TransportBase::new(&snap.q, &setup.grid, &w).unwrap();
        assert!(base.min_transport >= 0.05, "{}", base.min_transport);
    }

    #[test]
    fn residual_vanishes_for_identical_coefficients() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let twin = bump_twin(&setup, 0.0);
        let r = cit_residual_of_twin(&twin, &setup).unwrap();
        assert!(r.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn residual_converges_under_refinement() {
        let res = |n: usize| {
            let setup = Setup::reference_1d(n, 4 * n).unwrap();
            let twin = bump_twin(&setup, 0.1);
            let r = cit_residual_of_twin(&twin, &setup).unwrap();
            r.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let (a, b, c) = (res(16), res(32), res(64));
        assert!((a / b).log2() >= 1.0 && (b / c).log2() >= 1.0, "{a} {b} {c}");
    }

    #[test]
    fn residual_scales_with_the_data() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let g = &setup.grid;
        let c_ref = vec![1.0; 17];
        let gamma = perturbation(g, 0.1, Shape::Plain);
        let c: Vec<f64> = gamma.iter().map(|v| 1.0 + v).collect();
        let solve = |coef: &[f64], k: f64| {
            let p = HeatProblem::new(
                coef.to_vec(),
                g.sample(|x| k * crate::experiment::reference_initial(x)),
                move |t, x| k * crate::experiment::reference_boundary(t, x),
                Positivity::Floor(0.5),
            );
            solve_heat(&p, g, &setup.full).unwrap()
        };
        let residual = |k: f64| {
            let (q, q_ref) = (solve(&c, k), solve(&c_ref, k));
            let u = q.sub(&q_ref);
            let y = crate::forward::time_derivative(&u).unwrap();
            let mid = setup.window.midpoint_index();
            let w = &setup.window;
            cit_residual(
                &gamma,
                &c,
                q_ref.window_slice(w, mid).unwrap(),
                u.window_slice(w, mid).unwrap(),
                y.window_slice(w, mid).unwrap(),
                g,
            )
            .unwrap()
        };
        let (r1, r2) = (residual(1.0), residual(2.0));
        let scale = r1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in r1.iter().zip(&r2) {
            assert!((b - 2.0 * a).abs() <= 1e-8 * (1.0 + scale), "{a} {b}");
        }
    }

    #[test]
    fn proposition_zero_perturbation() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let w = weights_for(&setup, 1.0, 1.0);
        let twin = bump_twin(&setup, 0.0);
        let rep = proposition_of_twin(&twin, &setup, &w).unwrap();
        assert!(rep.combined.lhs_total.is_zero());
        assert_eq!(rep.combined.ratio, 0.0);
    }

    #[test]
    fn proposition_amplitude_family() {
        let setup = Setup::reference_1d(32, 128).unwrap();
        let w = weights_for(&setup, 1.0, 1.0);
        let ratios: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|&eps| {
                let twin = bump_twin(&setup, eps);
                let rep = proposition_of_twin(&twin, &setup, &w).unwrap();
                for (_, part) in rep.parts() {
                    assert!(part.ratio_is_finite());
                }
                let bound = ln_lhs_lower_bound(&twin.gamma, &setup.grid, &w).unwrap();
                assert!(rep.combined.lhs_total.ln() >= bound - 1e-6);
                rep.combined.ln_ratio
            })
            .collect();
        let spread = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - ratios.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(spread < 1.25f64.ln(), "{ratios:?}");
    }

    #[test]
    fn parts_csv_layout() {
        let setup = Setup::reference_1d(16, 64).unwrap();
        let w = weights_for(&setup, 1.0, 1.0);
        let rep = proposition_of_twin(&bump_twin(&setup, 0.05), &setup, &w).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("part,term,value,ln_value\n"));
        for part in ["scalar", "gradient", "combined"] {
            assert!(text.contains(&format!("\n{part},ratio,")));
        }
    }
}
