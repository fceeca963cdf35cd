//! Carleman weight functions.
//!
//! With `theta(t) = (t - t0)(T - t)`, `beta = beta_tilde + K` and
//! `K = m * max(beta_tilde)`:
//!
//! ```text
//! phi(x,t) = exp(lambda beta(x)) / theta(t)
//! eta(x,t) = (exp(2 lambda K) - exp(lambda beta(x))) / theta(t)
//! ```
//!
//! `eta` attains its minimum `eta_ref` at `(x*, T')`, where `x*` maximizes
//! `beta`. Everything downstream works with `eta - eta_ref`, which is formed
//! below as a sum of two nonnegative terms so that no cancellation occurs:
//!
//! ```text
//! eta - eta_ref = e^{lambda beta*} [ expm1(lambda (2K - beta*)) (t - T')^2
//!                                    - theta' expm1(lambda (beta - beta*)) ] / (theta theta')
//! ```
//!
//! The shared factor `exp(-2 s eta_ref)` is carried as the shift of
//! [`LogScalar`](crate::logspace::LogScalar) values.

use crate::error::{LabError, Result};
use crate::grid::{Face, Grid, TimeGrid, VectorField};

/// Coefficient of the transverse axes in `beta_tilde` when those axes carry
/// no observation face.
const TRANSVERSE_CURVATURE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightParams {
    pub lambda: f64,
    pub s: f64,
    /// `m > 1` in `K = m * max(beta_tilde)`.
    pub m: f64,
    /// Anchor point `x0`, one coordinate per spatial axis, outside the closed domain.
    pub anchor: Vec<f64>,
}

impl WeightParams {
    pub fn new(lambda: f64, s: f64, m: f64, anchor: Vec<f64>) -> Self {
        WeightParams {
            lambda,
            s,
            m,
            anchor,
        }
    }
}

/// Weight values on one interior time slice of the observation window.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSlice {
    pub index: usize,
    pub t: f64,
    pub ln_phi: Vec<f64>,
    pub phi: Vec<f64>,
    pub eta: Vec<f64>,
    /// `eta - eta_ref >= 0`.
    pub rel_eta: Vec<f64>,
    pub dt_phi: Vec<f64>,
    pub dt_eta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    params: WeightParams,
    timegrid: TimeGrid,
    axis_sign: Vec<f64>,
    pub beta_tilde: Vec<f64>,
    pub beta: Vec<f64>,
    pub grad_beta: VectorField,
    pub lap_beta: Vec<f64>,
    pub k: f64,
    pub c0: f64,
    pub beta_star: f64,
    pub eta_ref: f64,
    slices: Vec<WeightSlice>,
    exp_disabled: bool,
}

/// Weight-function ratios used as pointwise bounds in the energy argument.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightBounds {
    pub dt_eta_over_phi2: f64,
    pub dt_phi_over_phi3: f64,
    pub phi_inv_over_phi: f64,
    pub phi_inv2_over_phi_inv: f64,
    /// `max_x |d_t eta| / phi^2` on the midpoint slice.
    pub dt_eta_over_phi2_at_midpoint: f64,
}

/// `Phi(t) = 1 / ((t - t0)(T - t))` on the nodes of a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeProfile {
    /// `+inf` at the two endpoints.
    pub values: Vec<f64>,
    pub argmin: usize,
    pub min_value: f64,
}

/// `1 / ((t - t0)(T - t))`.
pub fn time_factor(t0: f64, t_end: f64, t: f64) -> f64 {
    1.0 / ((t - t0) * (t_end - t))
}

pub fn weight_time_profile(tg: &TimeGrid) -> Result<TimeProfile> {
    let values: Vec<f64> = (0..=tg.steps())
        .map(|i| {
            if i == 0 || i == tg.steps() {
                f64::INFINITY
            } else {
                1.0 / tg.theta(i)
            }
        })
        .collect();
    let (argmin, min_value) =
        values
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |best, (i, v)| if v < best.1 { (i, v) } else { best },
            );
    if argmin != tg.midpoint_index() {
        return Err(LabError::TimeGrid(format!(
            "time weight minimized at node {argmin}, expected the midpoint {}",
            tg.midpoint_index()
        )));
    }
    Ok(TimeProfile {
        values,
        argmin,
        min_value,
    })
}

pub fn build_weights(grid: &Grid, tg: &TimeGrid, params: WeightParams) -> Result<WeightSet> {
    WeightSet::build(grid, tg, params)
}

impl WeightSet {
    pub fn build(grid: &Grid, tg: &TimeGrid, params: WeightParams) -> Result<Self> {
        let WeightParams {
            lambda,
            s,
            m,
            ref anchor,
        } = params;
        if !(lambda >= 1.0 && lambda.is_finite()) || !(s >= 1.0 && s.is_finite()) {
            return Err(LabError::Weights(format!(
                "need lambda >= 1 and s >= 1, got lambda = {lambda}, s = {s}"
            )));
        }
        if !(m > 1.0 && m.is_finite()) {
            return Err(LabError::Weights(format!("need m > 1, got {m}")));
        }
        if anchor.len() != grid.dim() {
            return Err(LabError::Weights(format!(
                "anchor has {} coordinates, domain is {}D",
                anchor.len(),
                grid.dim()
            )));
        }
        if anchor.iter().all(|&a| (0.0..=1.0).contains(&a)) {
            return Err(LabError::Weights(format!(
                "anchor {anchor:?} lies inside the closed domain"
            )));
        }

        // +1 on axes carrying an observation face, concave elsewhere
        let axis_sign: Vec<f64> = (0..grid.dim())
            .map(|a| {
                if grid.gamma0_faces().iter().any(|f| f.axis() == a) {
                    1.0
                } else {
                    -TRANSVERSE_CURVATURE
                }
            })
            .collect();

        let nodes = grid.num_nodes();
        let mut beta_tilde = vec![0.0; nodes];
        let mut grad = VectorField::zeros(grid.dim(), nodes);
        for node in 0..nodes {
            let x = grid.coord(node);
            for a in 0..grid.dim() {
                let d = x[a] - anchor[a];
                beta_tilde[node] += axis_sign[a] * d * d;
                grad.comps[a][node] = 2.0 * axis_sign[a] * d;
            }
        }
        let lap_value: f64 = axis_sign.iter().map(|sg| 2.0 * sg).sum();
        let lap_beta = vec![lap_value; nodes];

        if let Some(i) = beta_tilde.iter().position(|&b| b <= 0.0) {
            return Err(LabError::Weights(format!(
                "beta_tilde must be positive, got {} at node {i}",
                beta_tilde[i]
            )));
        }
        let c0 = grad
            .sq_norm()
            .iter()
            .map(|v| v.sqrt())
            .fold(f64::INFINITY, f64::min);
        if c0 <= 0.0 {
            return Err(LabError::Weights(
                "|grad beta_tilde| vanishes at a node".into(),
            ));
        }
        for &face in grid.faces() {
            if grid.gamma0_faces().contains(&face) {
                continue;
            }
            let nu = face.outward_normal();
            for node in grid.face_nodes(face) {
                if grid.is_gamma0(node) {
                    continue;
                }
                let dnu: f64 = (0..grid.dim()).map(|a| grad.comps[a][node] * nu[a]).sum();
                if dnu > 1e-12 {
                    return Err(LabError::Weights(format!(
                        "normal derivative of beta_tilde is {dnu} > 0 at node {node} on face {face:?} outside the observation boundary"
                    )));
                }
            }
        }

        let max_bt = beta_tilde.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let k = m * max_bt;
        if 2.0 * lambda * k > 700.0 {
            return Err(LabError::Weights(format!(
                "exp(2 lambda K) = exp({}) overflows",
                2.0 * lambda * k
            )));
        }
        let beta: Vec<f64> = beta_tilde.iter().map(|b| b + k).collect();
        let beta_star = beta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e_star = (lambda * beta_star).exp();
        let gap_star = (lambda * (2.0 * k - beta_star)).exp_m1();
        let mid = tg.midpoint_index();
        let theta_mid = tg.theta(mid);
        let eta_ref = e_star * gap_star / theta_mid;

        let mut slices = Vec::with_capacity(tg.steps().saturating_sub(1));
        for i in 1..tg.steps() {
            let theta = tg.theta(i);
            let theta_dot = tg.theta_dot(i);
            let di = i as f64 - mid as f64;
            let dist2 = tg.dt() * tg.dt() * di * di;
            let mut sl = WeightSlice {
                index: i,
                t: tg.time(i),
                ln_phi: Vec::with_capacity(nodes),
                phi: Vec::with_capacity(nodes),
                eta: Vec::with_capacity(nodes),
                rel_eta: Vec::with_capacity(nodes),
                dt_phi: Vec::with_capacity(nodes),
                dt_eta: Vec::with_capacity(nodes),
            };
            for node in 0..nodes {
                let lb = lambda * beta[node];
                let ln_phi = lb - theta.ln();
                let phi = ln_phi.exp();
                let eta = lb.exp() * (lambda * (2.0 * k - beta[node])).exp_m1() / theta;
                let rel = e_star
                    * (gap_star * dist2 - theta_mid * (lambda * (beta[node] - beta_star)).exp_m1())
                    / (theta * theta_mid);
                let dt_phi = -phi * theta_dot / theta;
                let dt_eta = -eta * theta_dot / theta;
                for (v, what) in [
                    (phi, "phi"),
                    (eta, "eta"),
                    (rel, "eta - eta_ref"),
                    (dt_phi, "d_t phi"),
                    (dt_eta, "d_t eta"),
                ] {
                    if !v.is_finite() {
                        return Err(LabError::non_finite(format!("{what} on slice {i}"), node));
                    }
                }
                if eta < 0.0 || rel < 0.0 {
                    return Err(LabError::Weights(format!(
                        "eta negative at node {node}, slice {i}"
                    )));
                }
                sl.ln_phi.push(ln_phi);
                sl.phi.push(phi);
                sl.eta.push(eta);
                sl.rel_eta.push(rel);
                sl.dt_phi.push(dt_phi);
                sl.dt_eta.push(dt_eta);
            }
            slices.push(sl);
        }

        Ok(WeightSet {
            params,
            timegrid: *tg,
            axis_sign,
            beta_tilde,
            beta,
            grad_beta: grad,
            lap_beta,
            k,
            c0,
            beta_star,
            eta_ref,
            slices,
            exp_disabled: false,
        })
    }

    pub fn params(&self) -> &WeightParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    pub fn s(&self) -> f64 {
        self.params.s
    }

    pub fn timegrid(&self) -> &TimeGrid {
        &self.timegrid
    }

    /// Coefficient of each axis in `beta_tilde = sum_a sign_a (x_a - x0_a)^2`.
    pub fn axis_sign(&self) -> &[f64] {
        &self.axis_sign
    }

    /// Interior slice `i` (`1 <= i < steps`); `None` at the window endpoints.
    pub fn slice(&self, i: usize) -> Option<&WeightSlice> {
        if i == 0 || i >= self.timegrid.steps() {
            None
        } else {
            Some(&self.slices[i - 1])
        }
    }

    pub fn slices(&self) -> &[WeightSlice] {
        &self.slices
    }

    pub fn midpoint(&self) -> &WeightSlice {
        self.slice(self.timegrid.midpoint_index())
            .expect("midpoint is an interior slice")
    }

    /// The log-shift `-2 s eta_ref` shared by all weighted integrals.
    pub fn shift(&self) -> f64 {
        if self.exp_disabled {
            0.0
        } else {
            -2.0 * self.params.s * self.eta_ref
        }
    }

    /// `ln(exp(-2 s eta) phi^k) - shift` at `(node, slice i)`; `-inf` at the
    /// window endpoints, where the weighted integrands extend by zero.
    pub fn ln_weight(&self, i: usize, node: usize, k: i32) -> f64 {
        match self.slice(i) {
            None => f64::NEG_INFINITY,
            Some(sl) => {
                let expo = if self.exp_disabled {
                    0.0
                } else {
                    -2.0 * self.params.s * sl.rel_eta[node]
                };
                k as f64 * sl.ln_phi[node] + expo
            }
        }
    }

    /// `ln(exp(-s eta)) + s eta_ref`, the scale of `psi = exp(-s eta) q`.
    pub fn ln_half_weight(&self, i: usize, node: usize) -> f64 {
        match self.slice(i) {
            None => f64::NEG_INFINITY,
            Some(sl) if !self.exp_disabled => -self.params.s * sl.rel_eta[node],
            Some(_) => 0.0,
        }
    }

    /// Test hook: the same weights with `eta` replaced by 0.
    #[doc(hidden)]
    pub fn without_exponential(&self) -> Self {
        WeightSet {
            exp_disabled: true,
            ..self.clone()
        }
    }

    pub fn exponential_disabled(&self) -> bool {
        self.exp_disabled
    }

    /// `grad(beta) . nu` at a boundary node.
    pub fn normal_derivative_beta(&self, grid: &Grid, node: usize) -> Option<f64> {
        let nu = grid.normal(node)?;
        Some(
            (0..grid.dim())
                .map(|a| self.grad_beta.comps[a][node] * nu[a])
                .sum(),
        )
    }

    /// Outward derivative of `beta` at `node` across a specific face.
    pub fn face_derivative_beta(&self, face: Face, node: usize) -> f64 {
        let nu = face.outward_normal();
        (0..self.grad_beta.dim())
            .map(|a| self.grad_beta.comps[a][node] * nu[a])
            .sum()
    }

    pub fn max_eta_at_midpoint(&self) -> f64 {
        self.midpoint()
            .eta
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn weight_bounds_check(w: &WeightSet) -> Result<WeightBounds> {
    let mut out = WeightBounds {
        dt_eta_over_phi2: 0.0,
        dt_phi_over_phi3: 0.0,
        phi_inv_over_phi: 0.0,
        phi_inv2_over_phi_inv: 0.0,
        dt_eta_over_phi2_at_midpoint: 0.0,
    };
    let mid = w.timegrid().midpoint_index();
    for sl in w.slices() {
        for node in 0..sl.phi.len() {
            let lp = sl.ln_phi[node];
            let r1 = (sl.dt_eta[node].abs().ln() - 2.0 * lp).exp();
            let r2 = (sl.dt_phi[node].abs().ln() - 3.0 * lp).exp();
            let r3 = (-2.0 * lp).exp();
            let r4 = (-lp).exp();
            for (v, what) in [
                (r1, "|d_t eta|/phi^2"),
                (r2, "|d_t phi|/phi^3"),
                (r3, "phi^-1/phi"),
                (r4, "phi^-2/phi^-1"),
            ] {
                if !v.is_finite() {
                    return Err(LabError::non_finite(
                        format!("{what} on slice {}", sl.index),
                        node,
                    ));
                }
            }
            out.dt_eta_over_phi2 = out.dt_eta_over_phi2.max(r1);
            out.dt_phi_over_phi3 = out.dt_phi_over_phi3.max(r2);
            out.phi_inv_over_phi = out.phi_inv_over_phi.max(r3);
            out.phi_inv2_over_phi_inv = out.phi_inv2_over_phi_inv.max(r4);
            if sl.index == mid {
                out.dt_eta_over_phi2_at_midpoint = out.dt_eta_over_phi2_at_midpoint.max(r1);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    fn reference(steps: usize, lambda: f64, s: f64) -> (Grid, TimeGrid, WeightSet) {
        let g = build_grid(1, 8, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, steps).unwrap();
        let w = build_weights(&g, &tg, WeightParams::new(lambda, s, 2.0, vec![-1.0])).unwrap();
        (g, tg, w)
    }

    #[test]
    fn one_dimensional_reference_setup() {
        let (g, _, w) = reference(8, 1.0, 1.0);
        assert_eq!(w.beta_tilde[0], 1.0);
        assert_eq!(w.beta_tilde[8], 4.0);
        assert_eq!(w.k, 8.0);
        assert_eq!(w.beta[0], 9.0);
        assert_eq!(w.beta[8], 12.0);
        assert_eq!(w.c0, 2.0);
        assert_eq!(w.face_derivative_beta(Face::West, 0), -2.0);
        assert_eq!(w.normal_derivative_beta(&g, 8), Some(4.0));
    }

    #[test]
    fn midpoint_values_for_unit_theta() {
        // t0 = 0, T = 2: theta(T') = 1
        let (g, tg, w) = reference(8, 1.0, 1.0);
        let mid = w.midpoint();
        assert_eq!(tg.theta(tg.midpoint_index()), 1.0);
        for node in 0..g.num_nodes() {
            let b = w.beta[node];
            assert!((mid.phi[node] / b.exp() - 1.0).abs() < 1e-14);
            let eta = 16f64.exp() - b.exp();
            assert!((mid.eta[node] / eta - 1.0).abs() < 1e-13);
            assert_eq!(mid.dt_eta[node], 0.0);
            assert_eq!(mid.dt_phi[node], 0.0);
        }
        assert!((w.eta_ref - (16f64.exp() - 12f64.exp())).abs() / w.eta_ref < 1e-14);
    }

    #[test]
    fn anchor_inside_domain_is_rejected() {
        let g = build_grid(1, 8, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, 8).unwrap();
        let r = build_weights(&g, &tg, WeightParams::new(1.0, 1.0, 2.0, vec![0.5]));
        assert!(matches!(r, Err(LabError::Weights(_))));
    }

    #[test]
    fn anchor_on_observed_side_violates_sign_condition() {
        let g = build_grid(1, 8, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, 8).unwrap();
        let r = build_weights(&g, &tg, WeightParams::new(1.0, 1.0, 2.0, vec![2.0]));
        assert!(matches!(r, Err(LabError::Weights(_))));
        assert!(build_weights(&g, &tg, WeightParams::new(1.0, 1.0, 1.0, vec![-1.0])).is_err());
        assert!(build_weights(&g, &tg, WeightParams::new(0.5, 1.0, 2.0, vec![-1.0])).is_err());
    }

    #[test]
    fn two_dimensional_weights_satisfy_sign_condition() {
        let g = build_grid(2, 16, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.5, 2.0, 96).unwrap();
        let w = build_weights(&g, &tg, WeightParams::new(1.0, 1.0, 2.0, vec![-1.0, 0.5])).unwrap();
        assert!(w.c0 >= 2.0 - 1e-12);
        for face in [Face::West, Face::South, Face::North] {
            for node in g.face_nodes(face) {
                if !g.is_gamma0(node) {
                    assert!(w.face_derivative_beta(face, node) <= 0.0);
                }
            }
        }
        // a plain radial weight cannot satisfy the sign condition on three faces
        assert!(
            build_weights(&g, &tg, WeightParams::new(1.0, 1.0, 2.0, vec![-1.0, -1.0])).is_err()
        );
    }

    #[test]
    fn time_profile_examples() {
        let tg = TimeGrid::new(0.0, 2.0, 8).unwrap();
        let p = weight_time_profile(&tg).unwrap();
        assert_eq!(p.argmin, 4);
        assert_eq!(p.min_value, 1.0);
        assert!((time_factor(0.0, 2.0, 0.5) - 4.0 / 3.0).abs() < 1e-15);
        assert!(p.values[2] > 1.0);
        assert_eq!(time_factor(0.0, 1.0, 0.5), 4.0);
    }

    #[test]
    fn time_profile_argmin_is_midpoint_for_random_windows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t0: f64 = rng.random_range(0.0..5.0);
            let len: f64 = rng.random_range(0.01..10.0);
            let steps = 2 * rng.random_range(1..200);
            let tg = TimeGrid::new(t0, t0 + len, steps).unwrap();
            let p = weight_time_profile(&tg).unwrap();
            // brute-force scan of the continuous factor
            let scan = (1..steps)
                .map(|i| (i, time_factor(t0, t0 + len, t0 + i as f64 * tg.dt())))
                .fold(
                    (0, f64::INFINITY),
                    |b, (i, v)| if v < b.1 { (i, v) } else { b },
                );
            assert_eq!(p.argmin, steps / 2);
            assert_eq!(scan.0, steps / 2);
        }
    }

    #[test]
    fn eta_nonnegative_and_exponential_in_unit_interval() {
        let (_, _, w) = reference(16, 2.0, 4.0);
        for sl in w.slices() {
            for node in 0..sl.eta.len() {
                assert!(sl.eta[node] > 0.0);
                let ln_w = w.ln_weight(sl.index, node, 0) + w.shift();
                assert!(ln_w <= 0.0 && ln_w.is_finite());
            }
        }
    }

    #[test]
    fn monotone_in_k_and_lambda() {
        let g = build_grid(1, 8, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, 8).unwrap();
        let a = build_weights(&g, &tg, WeightParams::new(1.0, 1.0, 2.0, vec![-1.0])).unwrap();
        let b = build_weights(&g, &tg, WeightParams::new(1.0, 1.0, 3.0, vec![-1.0])).unwrap();
        let c = build_weights(&g, &tg, WeightParams::new(2.0, 1.0, 2.0, vec![-1.0])).unwrap();
        for i in 1..8 {
            let (sa, sb, sc) = (
                a.slice(i).unwrap(),
                b.slice(i).unwrap(),
                c.slice(i).unwrap(),
            );
            for node in 0..9 {
                assert!(sb.eta[node] >= sa.eta[node]);
                assert!(sc.phi[node] > sa.phi[node]);
            }
        }
    }

    #[test]
    fn closed_form_time_derivatives_match_differences() {
        // centered differences of tabulated phi, eta vs closed forms
        let err = |steps: usize| {
            let (_, tg, w) = reference(steps, 1.0, 1.0);
            let node = 3;
            let i = tg.steps() / 4;
            let (a, b, c) = (
                w.slice(i - 1).unwrap(),
                w.slice(i).unwrap(),
                w.slice(i + 1).unwrap(),
            );
            let fd_eta = (c.eta[node] - a.eta[node]) / (2.0 * tg.dt());
            let fd_phi = (c.phi[node] - a.phi[node]) / (2.0 * tg.dt());
            (
                (fd_eta - b.dt_eta[node]).abs() / b.dt_eta[node].abs(),
                (fd_phi - b.dt_phi[node]).abs() / b.dt_phi[node].abs(),
            )
        };
        let (e1, e2, e3) = (err(32), err(64), err(128));
        assert!((e1.0 / e2.0).log2() >= 1.9 && (e2.0 / e3.0).log2() >= 1.9);
        assert!((e1.1 / e2.1).log2() >= 1.9 && (e2.1 / e3.1).log2() >= 1.9);
    }

    #[test]
    fn bounds_are_finite_and_stable_under_refinement() {
        let (_, _, w) = reference(64, 1.0, 1.0);
        let b = weight_bounds_check(&w).unwrap();
        assert_eq!(b.dt_eta_over_phi2_at_midpoint, 0.0);
        assert!(b.dt_eta_over_phi2.is_finite() && b.dt_eta_over_phi2 > 0.0);
        let (_, _, w2) = reference(128, 1.0, 1.0);
        let b2 = weight_bounds_check(&w2).unwrap();
        for (x, y) in [
            (b.dt_eta_over_phi2, b2.dt_eta_over_phi2),
            (b.dt_phi_over_phi3, b2.dt_phi_over_phi3),
            (b.phi_inv_over_phi, b2.phi_inv_over_phi),
            (b.phi_inv2_over_phi_inv, b2.phi_inv2_over_phi_inv),
        ] {
            assert!((x - y).abs() / y < 0.05, "{x} vs {y}");
        }
    }

    #[test]
    fn relative_eta_matches_direct_difference() {
        let (_, _, w) = reference(8, 1.0, 1.0);
        for sl in w.slices() {
            for node in 0..sl.eta.len() {
                let direct = sl.eta[node] - w.eta_ref;
                assert!((direct - sl.rel_eta[node]).abs() <= 1e-9 * w.eta_ref);
            }
        }
    }
}
