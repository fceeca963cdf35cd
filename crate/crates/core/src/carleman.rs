//! Both sides of the global Carleman estimate on seeded test functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::forward::{time_derivative, SpaceTimeField};
use crate::grid::{Grid, ScalarField, TimeGrid};
use crate::logspace::{pow2_exponent, scale_pow2, LogScalar, ScaledField, ScaledValue};
use crate::observe::{
    flux_trace, scaled_norm_spacetime, weighted_boundary_norm, weighted_integral_spacetime,
    weighted_norm_spacetime,
};
use crate::report::{EstimateReport, ReportParams, Term};
use crate::weights::{build_weights, WeightParams, WeightSet};

/// Sign of the first-order term `2 s lambda phi c grad(beta) . grad(psi)` in `M2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum M2Sign {
    #[default]
    Plus,
    Minus,
}

impl M2Sign {
    fn factor(self) -> f64 {
        match self {
            M2Sign::Plus => 1.0,
            M2Sign::Minus => -1.0,
        }
    }
}

/// `q(x, t) = sin(k1 pi x) [sin(k2 pi y)] w(t)` with
/// `w(t) = offset + sum_j amp_j sin(freq_j (t - t0) + phase_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub id: usize,
    pub k: [u32; 2],
    pub offset: f64,
    pub amps: [f64; 3],
    pub freqs: [f64; 3],
    pub phases: [f64; 3],
}

impl TestFunction {
    /// Member `id` of the suite drawn from `seed`; independent of suite size.
    pub fn random(id: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let mut draw3 = |lo: f64, hi: f64| -> [f64; 3] {
            [
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
            ]
        };
        let amps = draw3(-0.5, 0.5);
        let freqs = draw3(0.5, 3.0);
        let phases = draw3(0.0, std::f64::consts::TAU);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        rng.set_word_pos(1 << 20);
        TestFunction {
            id,
            k: [rng.random_range(1..=3), rng.random_range(1..=3)],
            offset: rng.random_range(0.5..1.5),
            amps,
            freqs,
            phases,
        }
    }

    pub fn spatial(&self, grid: &Grid, x: [f64; 2]) -> f64 {
        use std::f64::consts::PI;
        let mut v = (self.k[0] as f64 * PI * x[0]).sin();
        if grid.dim() == 2 {
            v *= (self.k[1] as f64 * PI * x[1]).sin();
        }
        v
    }

    pub fn temporal(&self, t0: f64, t: f64) -> f64 {
        self.offset
            + (0..3)
                .map(|j| self.amps[j] * (self.freqs[j] * (t - t0) + self.phases[j]).sin())
                .sum::<f64>()
    }

    /// Samples on every window node; boundary values are exactly 0.
    pub fn sample(&self, grid: &Grid, window: &TimeGrid) -> Vec<ScalarField> {
        let mut spatial = grid.sample(|x| self.spatial(grid, x));
        for b in grid.boundary_nodes() {
            spatial[b] = 0.0;
        }
        (0..=window.steps())
            .map(|i| {
                let w = self.temporal(window.t0(), window.time(i));
                spatial.iter().map(|v| v * w).collect()
            })
            .collect()
    }
}

pub fn test_suite(count: usize, seed: u64) -> Vec<TestFunction> {
    (0..count)
        .map(|id| TestFunction::random(id, seed))
        .collect()
}

/// `psi = exp(-s eta) q` on interior window slices, scaled relative to `exp(-s eta_ref)`.
pub fn weighted_state(q: &[ScalarField], weights: &WeightSet) -> Vec<Option<ScaledField>> {
    let steps = weights.timegrid().steps();
    (0..=steps)
        .map(|i| {
            if i == 0 || i == steps {
                return None;
            }
            let logs: Vec<f64> = (0..q[i].len())
                .map(|node| weights.ln_half_weight(i, node))
                .collect();
            Some(ScaledField::from_parts(&q[i], &logs))
        })
        .collect()
}

fn grad_beta_sq(weights: &WeightSet, node: usize) -> f64 {
    weights
        .grad_beta
        .comps
        .iter()
        .map(|comp| comp[node] * comp[node])
        .sum()
}

/// `M1 psi = div(c grad psi) + s^2 lambda^2 c |grad beta|^2 phi^2 psi + s d_t(eta) psi`.
pub fn apply_m1(
    psi: &[Option<ScaledField>],
    c: &[f64],
    grid: &Grid,
    weights: &WeightSet,
) -> Result<Vec<Option<ScaledField>>> {
    let op = grid.flux_div_op(c)?;
    let (s, lambda) = (weights.s(), weights.lambda());
    psi.iter()
        .enumerate()
        .map(|(i, slice)| {
            let Some(f) = slice else { return Ok(None) };
            let sl = weights.slice(i).expect("interior slice");
            let div = op.apply_scaled(f);
            let values = (0..f.len())
                .map(|node| {
                    let zero_order = s
                        * s
                        * lambda
                        * lambda
                        * c[node]
                        * grad_beta_sq(weights, node)
                        * sl.phi[node]
                        * sl.phi[node]
                        + s * sl.dt_eta[node];
                    ScaledValue::combine([(1.0, div.get(node)), (zero_order, f.get(node))])
                })
                .collect();
            Ok(Some(ScaledField { values }))
        })
        .collect()
}

/// Centered time difference of a scaled field; missing slices count as 0.
fn scaled_time_derivative(psi: &[Option<ScaledField>], i: usize, dt: f64) -> ScaledField {
    let len = psi.iter().flatten().next().map_or(0, ScaledField::len);
    let at = |k: usize, node: usize| {
        psi.get(k)
            .and_then(|s| s.as_ref())
            .map_or(ScaledValue::ZERO, |f| f.get(node))
    };
    let r = 0.5 / dt;
    ScaledField {
        values: (0..len)
            .map(|node| {
                let prev = if i == 0 {
                    ScaledValue::ZERO
                } else {
                    at(i - 1, node)
                };
                ScaledValue::combine([(r, at(i + 1, node)), (-r, prev)])
            })
            .collect(),
    }
}

/// `M2 psi = d_t psi +- 2 s lambda phi c grad beta . grad psi - 2 s lambda^2 phi c |grad beta|^2 psi`.
pub fn apply_m2(
    psi: &[Option<ScaledField>],
    c: &[f64],
    grid: &Grid,
    weights: &WeightSet,
    sign: M2Sign,
) -> Result<Vec<Option<ScaledField>>> {
    grid.check_len(c, "conductivity")?;
    let (s, lambda) = (weights.s(), weights.lambda());
    let dt = weights.timegrid().dt();
    let grad_ops: Vec<_> = (0..grid.dim()).map(|a| grid.gradient_op(a)).collect();
    psi.iter()
        .enumerate()
        .map(|(i, slice)| {
            let Some(f) = slice else { return Ok(None) };
            let sl = weights.slice(i).expect("interior slice");
            let dpsi = scaled_time_derivative(psi, i, dt);
            let grads: Vec<ScaledField> = grad_ops.iter().map(|op| op.apply_scaled(f)).collect();
            let values = (0..f.len())
                .map(|node| {
                    let base = 2.0 * s * lambda * sl.phi[node] * c[node];
                    let mut terms = vec![
                        (1.0, dpsi.get(node)),
                        (-base * lambda * grad_beta_sq(weights, node), f.get(node)),
                    ];
                    for (a, g) in grads.iter().enumerate() {
                        terms.push((
                            sign.factor() * base * weights.grad_beta.comps[a][node],
                            g.get(node),
                        ));
                    }
                    ScaledValue::combine(terms)
                })
                .collect();
            Ok(Some(ScaledField { values }))
        })
        .collect()
}

fn require_vanishing_on_boundary(q: &[ScalarField], grid: &Grid) -> Result<()> {
    let scale = q.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, slice) in q.iter().enumerate() {
        grid.check_len(slice, "test function")?;
        for b in grid.boundary_nodes() {
            if slice[b].abs() > 1e-12 * (1.0 + scale) {
                return Err(LabError::Precondition(format!(
                    "test function does not vanish on the lateral boundary: {} at node {b}, slice {i}",
                    slice[b]
                )));
            }
        }
    }
    Ok(())
}

/// Options for [`carleman_sides`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CarlemanOptions {
    pub sign: M2Sign,
}

/// LHS and RHS of the Carleman estimate for `q` sampled on every window node.
pub fn carleman_sides(
    q: &[ScalarField],
    c: &[f64],
    grid: &Grid,
    weights: &WeightSet,
    options: CarlemanOptions,
) -> Result<EstimateReport> {
    let window = *weights.timegrid();
    if q.len() != window.steps() + 1 {
        return Err(LabError::Precondition(format!(
            "test function has {} slices, window has {}",
            q.len(),
            window.steps() + 1
        )));
    }
    require_vanishing_on_boundary(q, grid)?;
    let mut q: Vec<ScalarField> = q.to_vec();
    for slice in &mut q {
        for b in grid.boundary_nodes() {
            slice[b] = 0.0;
        }
    }
    // exact power-of-two normalization keeps q -> 2q bitwise homogeneous
    let e = pow2_exponent(q.iter().flatten());
    let q: Vec<ScalarField> = q.iter().map(|slice| scale_pow2(slice, e)).collect();
    let (s, lambda) = (weights.s(), weights.lambda());
    let shift = weights.shift();

    let psi = weighted_state(&q, weights);
    let m1 = apply_m1(&psi, c, grid, weights)?;
    let m2 = apply_m2(&psi, c, grid, weights, options.sign)?;
    let grad_sq: Vec<Vec<f64>> = q
        .iter()
        .map(|slice| crate::grid::discrete_gradient(slice, grid).sq_norm())
        .collect();

    let field = SpaceTimeField::new(q.clone(), window)?;
    let dq = time_derivative(&field)?;
    let op = grid.flux_div_op(c)?;
    let residual: Vec<Vec<f64>> = q
        .iter()
        .zip(&dq.values)
        .map(|(slice, dslice)| {
            let div = op.apply(slice);
            dslice.iter().zip(&div).map(|(a, b)| a - b).collect()
        })
        .collect();
    let trace = flux_trace(&field, grid, &window)?;

    let lhs = vec![
        Term::new("m1", scaled_norm_spacetime(&m1, grid, &window, shift)?),
        Term::new("m2", scaled_norm_spacetime(&m2, grid, &window, shift)?),
        Term::new(
            "gradient",
            weighted_integral_spacetime(&grad_sq, grid, weights, 1)?.scale(s * lambda * lambda),
        ),
        Term::new(
            "zero_order",
            weighted_norm_spacetime(&q, grid, weights, 3)?.scale(s.powi(3) * lambda.powi(4)),
        ),
    ];
    let rhs = vec![
        Term::new(
            "boundary",
            weighted_boundary_norm(&trace, grid, weights, false)?.scale(s * lambda),
        ),
        Term::new(
            "residual",
            weighted_norm_spacetime(&residual, grid, weights, 0)?,
        ),
    ];
    let rescale = |terms: Vec<Term>| -> Vec<Term> {
        terms
            .into_iter()
            .map(|t| Term::new(t.name, t.value.with_pow2(2 * e)))
            .collect()
    };
    Ok(EstimateReport::new(
        "carleman",
        rescale(lhs),
        rescale(rhs),
        ReportParams {
            s,
            lambda,
            dim: grid.dim(),
            n: grid.n(),
            steps: window.steps(),
        },
    ))
}

/// `iint M2(psi) psi`, once as a nodal product and once in the integrated-by-parts
/// form `d_t` term 0, transport term `-+ s lambda iint div(c phi grad beta) psi^2`.
/// Plain floating point: meant for weights that stay representable.
pub fn m2_pairing_two_ways(
    q: &[ScalarField],
    c: &[f64],
    grid: &Grid,
    weights: &WeightSet,
    sign: M2Sign,
) -> Result<(f64, f64)> {
    let psi = weighted_state(q, weights);
    let m2 = apply_m2(&psi, c, grid, weights, sign)?;
    let (s, lambda) = (weights.s(), weights.lambda());
    let tg = weights.timegrid();
    let qw = grid.quadrature_weights();
    let scale = weights.shift().exp();
    if scale == 0.0 {
        return Err(LabError::Precondition(
            "weights underflow; the plain pairing needs representable weights".into(),
        ));
    }
    let div_c_grad_beta = grid.flux_div_op(c)?.apply(&weights.beta);
    let mut nodal = 0.0;
    let mut by_parts = 0.0;
    for i in 1..tg.steps() {
        let sl = weights.slice(i).expect("interior slice");
        let (p, m) = (psi[i].as_ref().unwrap(), m2[i].as_ref().unwrap());
        for node in grid.interior_nodes() {
            let pv = p.get(node).value();
            let w = tg.dt() * qw[node] * scale;
            nodal += w * m.get(node).value() * pv;
            let g2 = grad_beta_sq(weights, node);
            let div_c_phi_grad_beta =
                sl.phi[node] * div_c_grad_beta[node] + c[node] * lambda * sl.phi[node] * g2;
            by_parts += w
                * pv
                * pv
                * (-sign.factor() * s * lambda * div_c_phi_grad_beta
                    - 2.0 * s * lambda * lambda * sl.phi[node] * c[node] * g2);
        }
    }
    Ok((nodal, by_parts))
}

/// One (test, s, lambda) cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub test_id: usize,
    pub s: f64,
    pub lambda: f64,
    pub report: EstimateReport,
}

/// Maximum ratio over the suite at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub s: f64,
    pub lambda: f64,
    pub max_ratio: f64,
    pub ln_max_ratio: f64,
    pub argmax: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CarlemanSweep {
    pub entries: Vec<SweepEntry>,
    pub summary: Vec<SweepSummary>,
}

impl CarlemanSweep {
    pub fn summary_at(&self, s: f64, lambda: f64) -> Option<&SweepSummary> {
        self.summary.iter().find(|r| r.s == s && r.lambda == lambda)
    }

    /// Largest `ln C(2s) - ln C(s)` over consecutive doublings in the s list.
    pub fn worst_doubling_growth(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for a in &self.summary {
            if let Some(b) = self.summary_at(2.0 * a.s, a.lambda) {
                worst = worst.max(b.ln_max_ratio - a.ln_max_ratio);
            }
        }
        worst
    }
}

/// Weight parameters shared by every point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSetup {
    pub m: f64,
    pub anchor: Vec<f64>,
    pub options: CarlemanOptions,
}

/// Evaluates every (test, s, lambda) combination. Entries come out ordered by
/// lambda, then s, then test index, whatever the thread count.
pub fn carleman_sweep(
    c: &[f64],
    suite: &[TestFunction],
    s_list: &[f64],
    lambda_list: &[f64],
    grid: &Grid,
    window: &TimeGrid,
    setup: &SweepSetup,
) -> Result<CarlemanSweep> {
    if suite.is_empty() || s_list.is_empty() || lambda_list.is_empty() {
        return Err(LabError::Precondition(
            "sweep needs a nonempty suite and parameter lists".into(),
        ));
    }
    let mut points = Vec::new();
    for &lambda in lambda_list {
        for &s in s_list {
            points.push((s, lambda));
        }
    }
    let weights: Vec<WeightSet> = points
        .par_iter()
        .map(|&(s, lambda)| {
            build_weights(
                grid,
                window,
                WeightParams::new(lambda, s, setup.m, setup.anchor.clone()),
            )
        })
        .collect::<Result<_>>()?;
    let samples: Vec<Vec<ScalarField>> = suite.iter().map(|t| t.sample(grid, window)).collect();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..suite.len()).map(move |t| (p, t)))
        .collect();
    let entries: Vec<SweepEntry> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let report = carleman_sides(&samples[t], c, grid, &weights[p], setup.options)?;
            Ok(SweepEntry {
                test_id: suite[t].id,
                s: points[p].0,
                lambda: points[p].1,
                report,
            })
        })
        .collect::<Result<_>>()?;
    let summary = points
        .iter()
        .enumerate()
        .map(|(p, &(s, lambda))| {
            let block = &entries[p * suite.len()..(p + 1) * suite.len()];
            let best = block
                .iter()
                .max_by(|a, b| a.report.ln_ratio.total_cmp(&b.report.ln_ratio))
                .expect("nonempty suite");
            SweepSummary {
                s,
                lambda,
                max_ratio: best.report.ratio,
                ln_max_ratio: best.report.ln_ratio,
                argmax: best.test_id,
            }
        })
        .collect();
    Ok(CarlemanSweep { entries, summary })
}

/// Total of a list of log-scalars, used for the scaling checks.
pub fn total(terms: &[Term]) -> LogScalar {
    LogScalar::sum(terms.iter().map(|t| t.value))
}
