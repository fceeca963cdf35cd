//! Measurement extraction and the weighted norms used by every estimate.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{LabError, Result};
use crate::forward::{snapshot_package, time_derivative, Snapshot, SpaceTimeField};
use crate::grid::{Grid, TimeGrid, VectorField};
use crate::logspace::{log_sum_exp, LogScalar, ScaledField};
use crate::weights::WeightSet;

/// Boundary flux of `d_t q` on Γ₀ over the interior window nodes, plus the
/// interior snapshots at `T'`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    /// `flux_trace[b][i - 1]` at the `b`-th Γ₀ node and window node `i`.
    pub flux_trace: Vec<Vec<f64>>,
    pub snapshot: Snapshot,
}

pub fn extract_observations(
    field: &SpaceTimeField,
    grid: &Grid,
    window: &TimeGrid,
    c: &[f64],
) -> Result<ObservationSet> {
    let dq = time_derivative(field)?;
    let flux_trace = flux_trace(&dq, grid, window)?;
    let snapshot = snapshot_package(field, grid, window, c)?;
    Ok(ObservationSet {
        flux_trace,
        snapshot,
    })
}

/// `d_nu f` at Γ₀ nodes over the interior window nodes.
pub fn flux_trace(field: &SpaceTimeField, grid: &Grid, window: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    let slices = field.window_slices(window)?;
    grid.gamma0_nodes()
        .iter()
        .map(|&b| {
            (1..window.steps())
                .map(|i| {
                    let v = grid
                        .normal_derivative(&slices[i], b)
                        .expect("Γ₀ nodes lie on the boundary");
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(LabError::non_finite("boundary flux", b))
                    }
                })
                .collect()
        })
        .collect()
}

fn check_power(k: i32) -> Result<()> {
    if (-2..=3).contains(&k) {
        Ok(())
    } else {
        Err(LabError::Precondition(format!(
            "weight power k = {k} outside [-2, 3]"
        )))
    }
}

fn ln_sq(v: f64, node: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(2.0 * v.abs().ln())
    } else {
        Err(LabError::non_finite("integrand", node))
    }
}

/// Pointwise `|v|^2` of a vector field.
pub fn sq_magnitude(v: &VectorField) -> Vec<f64> {
    v.sq_norm()
}

/// `int e^{-2 s eta(T')} phi(T')^k density` for a nonnegative density.
pub fn weighted_integral_space(
    density: &[f64],
    grid: &Grid,
    weights: &WeightSet,
    k: i32,
) -> Result<LogScalar> {
    check_power(k)?;
    grid.check_len(density, "integrand")?;
    let mid = weights.timegrid().midpoint_index();
    let qw = grid.quadrature_weights();
    let mut terms = Vec::with_capacity(density.len());
    for (node, &d) in density.iter().enumerate() {
        if !(d.is_finite() && d >= 0.0) {
            return Err(LabError::non_finite("integrand", node));
        }
        terms.push(qw[node].ln() + d.ln() + weights.ln_weight(mid, node, k));
    }
    Ok(LogScalar::new(weights.shift(), log_sum_exp(terms)))
}

/// `int e^{-2 s eta(T')} phi(T')^k |f|^2`.
pub fn weighted_norm_space(
    field: &[f64],
    grid: &Grid,
    weights: &WeightSet,
    k: i32,
) -> Result<LogScalar> {
    let sq: Vec<f64> = field.iter().map(|v| v * v).collect();
    if let Some(i) = field.iter().position(|v| !v.is_finite()) {
        return Err(LabError::non_finite("integrand", i));
    }
    weighted_integral_space(&sq, grid, weights, k)
}

pub fn weighted_norm_space_vec(
    field: &VectorField,
    grid: &Grid,
    weights: &WeightSet,
    k: i32,
) -> Result<LogScalar> {
    weighted_integral_space(&field.sq_norm(), grid, weights, k)
}

/// `iint e^{-2 s eta} phi^k density` over the window; `densities` holds one
/// slice per window node and the endpoint slices contribute 0.
pub fn weighted_integral_spacetime(
    densities: &[Vec<f64>],
    grid: &Grid,
    weights: &WeightSet,
    k: i32,
) -> Result<LogScalar> {
    check_power(k)?;
    let tg = weights.timegrid();
    if densities.len() < tg.steps() + 1 {
        return Err(LabError::Precondition(format!(
            "{} slices for a window with {} nodes",
            densities.len(),
            tg.steps() + 1
        )));
    }
    let qw = grid.quadrature_weights();
    let ln_dt = tg.dt().ln();
    let mut terms = Vec::with_capacity((tg.steps() - 1) * grid.num_nodes());
    for (i, slice) in densities.iter().enumerate().take(tg.steps()).skip(1) {
        grid.check_len(slice, "integrand")?;
        for (node, &d) in slice.iter().enumerate() {
            if !(d.is_finite() && d >= 0.0) {
                return Err(LabError::non_finite(
                    format!("integrand on slice {i}"),
                    node,
                ));
            }
            terms.push(ln_dt + qw[node].ln() + d.ln() + weights.ln_weight(i, node, k));
        }
    }
    Ok(LogScalar::new(weights.shift(), log_sum_exp(terms)))
}

pub fn weighted_norm_spacetime(
    slices: &[Vec<f64>],
    grid: &Grid,
    weights: &WeightSet,
    k: i32,
) -> Result<LogScalar> {
    let sq: Vec<Vec<f64>> = slices
        .iter()
        .map(|s| s.iter().map(|v| v * v).collect())
        .collect();
    weighted_integral_spacetime(&sq, grid, weights, k)
}

/// `int_{t0}^{T} int_{Γ₀} e^{-2 s eta} phi [d_nu beta] |trace|^2`.
pub fn weighted_boundary_norm(
    trace: &[Vec<f64>],
    grid: &Grid,
    weights: &WeightSet,
    with_normal_beta: bool,
) -> Result<LogScalar> {
    let tg = weights.timegrid();
    check_trace(trace, grid, tg)?;
    let gw = grid.gamma0_weights();
    let ln_dt = tg.dt().ln();
    let mut terms = Vec::new();
    for (b, (&node, row)) in grid.gamma0_nodes().iter().zip(trace).enumerate() {
        let mut ln_factor = gw[b].ln() + ln_dt;
        if with_normal_beta {
            let dnu = weights
                .normal_derivative_beta(grid, node)
                .expect("Γ₀ nodes lie on the boundary");
            if dnu < 0.0 {
                return Err(LabError::Precondition(format!(
                    "d_nu beta = {dnu} < 0 at observation node {node}"
                )));
            }
            ln_factor += dnu.ln();
        }
        for (j, &v) in row.iter().enumerate() {
            terms.push(ln_factor + ln_sq(v, node)? + weights.ln_weight(j + 1, node, 1));
        }
    }
    Ok(LogScalar::new(weights.shift(), log_sum_exp(terms)))
}

fn check_trace(trace: &[Vec<f64>], grid: &Grid, tg: &TimeGrid) -> Result<()> {
    if trace.len() != grid.gamma0_nodes().len()
        || trace
            .iter()
            .any(|r| r.len() != tg.steps().saturating_sub(1))
    {
        return Err(LabError::Precondition(format!(
            "trace must be {} x {} (Γ₀ nodes x interior time nodes)",
            grid.gamma0_nodes().len(),
            tg.steps().saturating_sub(1)
        )));
    }
    Ok(())
}

/// `iint |psi|^2` for fields stored with explicit scales, where the scales
/// are taken relative to `exp(shift / 2)`. `slices[i]` is `None` where the
/// integrand vanishes.
pub fn scaled_norm_spacetime(
    slices: &[Option<ScaledField>],
    grid: &Grid,
    tg: &TimeGrid,
    shift: f64,
) -> Result<LogScalar> {
    let qw = grid.quadrature_weights();
    let tw = tg.trapezoid_weights();
    let mut terms = Vec::new();
    for (i, slice) in slices.iter().enumerate() {
        let Some(f) = slice else { continue };
        for node in 0..f.len() {
            let v = f.get(node);
            if !(v.mant.is_finite() && !v.log.is_nan() && v.log != f64::INFINITY) {
                return Err(LabError::non_finite(
                    format!("scaled integrand on slice {i}"),
                    node,
                ));
            }
            terms.push(tw[i].ln() + qw[node].ln() + v.ln_sq());
        }
    }
    Ok(LogScalar::new(shift, log_sum_exp(terms)))
}

/// Plain `int |f|^2`.
pub fn plain_norm_space(field: &[f64], grid: &Grid) -> Result<f64> {
    let sq: Vec<f64> = field.iter().map(|v| v * v).collect();
    crate::grid::quadrature_space(&sq, grid)
}

pub fn plain_norm_space_vec(field: &VectorField, grid: &Grid) -> Result<f64> {
    crate::grid::quadrature_space(&field.sq_norm(), grid)
}

/// Plain `int_{t0}^{T} int_{Γ₀} |trace|^2` over the interior time nodes.
pub fn plain_boundary_norm(trace: &[Vec<f64>], grid: &Grid, tg: &TimeGrid) -> Result<f64> {
    check_trace(trace, grid, tg)?;
    let gw = grid.gamma0_weights();
    let mut total = 0.0;
    for (b, row) in trace.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(LabError::non_finite(
                    format!("trace at time node {}", j + 1),
                    b,
                ));
            }
            total += tg.dt() * gw[b] * v * v;
        }
    }
    Ok(total)
}

impl ObservationSet {
    pub fn num_gamma0(&self) -> usize {
        self.flux_trace.len()
    }

    /// Trace difference `self - other`.
    pub fn trace_difference(&self, other: &ObservationSet) -> Vec<Vec<f64>> {
        self.flux_trace
            .iter()
            .zip(&other.flux_trace)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect()
    }

    /// Adds `N(0, sigma^2)` noise to the flux trace, and to the snapshots too
    /// when `snapshots` is set.
    pub fn add_noise<R: Rng>(&mut self, sigma: f64, snapshots: bool, rng: &mut R) -> Result<()> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(LabError::Precondition(format!(
                "noise level {sigma} must be >= 0"
            )));
        }
        if sigma == 0.0 {
            return Ok(());
        }
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        for v in self.flux_trace.iter_mut().flatten() {
            *v += normal.sample(rng);
        }
        if snapshots {
            let s = &mut self.snapshot;
            let fields = [&mut s.q, &mut s.lap, &mut s.flux_div]
                .into_iter()
                .chain(s.grad.comps.iter_mut())
                .chain(s.grad_lap.comps.iter_mut());
            for f in fields {
                for v in f.iter_mut() {
                    *v += normal.sample(rng);
                }
            }
        }
        Ok(())
    }

    /// Rows `kind,index1,index2,value`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kind,index1,index2,value")?;
        for (b, row) in self.flux_trace.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(out, "flux,{b},{},{v:.16e}", j + 1)?;
            }
        }
        let s = &self.snapshot;
        for (kind, f) in [("q", &s.q), ("lap", &s.lap), ("flux_div", &s.flux_div)] {
            for (node, v) in f.iter().enumerate() {
                writeln!(out, "{kind},{node},0,{v:.16e}")?;
            }
        }
        for (kind, f) in [("grad", &s.grad), ("grad_lap", &s.grad_lap)] {
            for (axis, comp) in f.comps.iter().enumerate() {
                for (node, v) in comp.iter().enumerate() {
                    writeln!(out, "{kind},{node},{axis},{v:.16e}")?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut entries: BTreeMap<String, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| LabError::Config("empty observation file".into()))??;
        if header.trim() != "kind,index1,index2,value" {
            return Err(LabError::Config(format!(
                "unexpected observation header {header:?}"
            )));
        }
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || {
                LabError::Config(format!(
                    "malformed observation row {}: {line:?}",
                    lineno + 2
                ))
            };
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 4 {
                return Err(bad());
            }
            let i1: usize = parts[1].trim().parse().map_err(|_| bad())?;
            let i2: usize = parts[2].trim().parse().map_err(|_| bad())?;
            let v: f64 = parts[3].trim().parse().map_err(|_| bad())?;
            entries
                .entry(parts[0].trim().to_string())
                .or_default()
                .insert((i1, i2), v);
        }
        let dense = |kind: &str, first_col: usize| -> Result<Vec<Vec<f64>>> {
            let Some(map) = entries.get(kind) else {
                return Ok(Vec::new());
            };
            let rows = map.keys().map(|k| k.0).max().map_or(0, |m| m + 1);
            let cols = map.keys().map(|k| k.1).max().map_or(0, |m| m + 1);
            let mut out = vec![vec![f64::NAN; cols.saturating_sub(first_col)]; rows];
            for (&(a, b), &v) in map {
                if b < first_col {
                    return Err(LabError::Config(format!("{kind} column {b} out of range")));
                }
                out[a][b - first_col] = v;
            }
            if out.iter().flatten().any(|v| v.is_nan()) {
                return Err(LabError::Config(format!(
                    "missing {kind} entries in observation file"
                )));
            }
            Ok(out)
        };
        let column = |m: Vec<Vec<f64>>| -> Vec<f64> { m.into_iter().map(|r| r[0]).collect() };
        let transpose = |m: Vec<Vec<f64>>| -> VectorField {
            let dim = m.first().map_or(0, Vec::len);
            VectorField {
                comps: (0..dim).map(|a| m.iter().map(|r| r[a]).collect()).collect(),
            }
        };
        // flux rows are indexed from time node 1
        let flux_trace = dense("flux", 1)?;
        Ok(ObservationSet {
            flux_trace,
            snapshot: Snapshot {
                q: column(dense("q", 0)?),
                lap: column(dense("lap", 0)?),
                flux_div: column(dense("flux_div", 0)?),
                grad: transpose(dense("grad", 0)?),
                grad_lap: transpose(dense("grad_lap", 0)?),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_heat, HeatProblem, Positivity};
    use crate::grid::{build_grid, Face};
    use crate::weights::{build_weights, WeightParams};
    use std::f64::consts::PI;

    fn setup(s: f64) -> (Grid, WeightSet) {
        let g = build_grid(1, 16, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, 16).unwrap();
        let w = build_weights(&g, &tg, WeightParams::new(1.0, s, 2.0, vec![-1.0])).unwrap();
        (g, w)
    }

    #[test]
    fn trace_of_manufactured_solution() {
        let err = |n: usize| {
            let g = build_grid(1, n, &[Face::East]).unwrap();
            let tg = TimeGrid::new(0.0, 2.0, 2 * n).unwrap();
            let f = SpaceTimeField::new(
                (0..=2 * n)
                    .map(|k| g.sample(|x| (-tg.time(k)).exp() * (PI * x[0]).sin()))
                    .collect(),
                tg,
            )
            .unwrap();
            let window = TimeGrid::window_of_solve(0.5, 2.0, 2 * n).unwrap();
            let obs = extract_observations(&f, &g, &window, &vec![1.0; n + 1]).unwrap();
            assert_eq!(obs.flux_trace.len(), 1);
            assert_eq!(obs.flux_trace[0].len(), window.steps() - 1);
            (1..window.steps())
                .map(|i| (obs.flux_trace[0][i - 1] - PI * (-window.time(i)).exp()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e2 < 1e-2 && (e1 / e2).log2() > 1.8, "{e1} {e2}");
    }

    #[test]
    fn constant_in_time_gives_zero_trace() {
        let g = build_grid(2, 8, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let f = SpaceTimeField::new(vec![g.sample(|x| 1.0 + x[0] * x[1]); 9], tg).unwrap();
        let window = TimeGrid::window_of_solve(0.5, 1.0, 8).unwrap();
        let obs = extract_observations(&f, &g, &window, &vec![1.0; 81]).unwrap();
        assert_eq!(obs.flux_trace.len(), 9);
        assert!(obs.flux_trace.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn twin_observations_agree() {
        let g = build_grid(1, 16, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, 64).unwrap();
        let window = TimeGrid::window_of_solve(0.5, 2.0, 64).unwrap();
        let c = g.sample(|x| 1.0 + 0.2 * x[0]);
        let p = HeatProblem::new(
            c.clone(),
            g.sample(|x| 1.0 + x[0]),
            |t, x| 1.0 + x[0] * (1.0 + t),
            Positivity::Floor(0.5),
        );
        let a = extract_observations(&solve_heat(&p, &g, &tg).unwrap(), &g, &window, &c).unwrap();
        let b = extract_observations(&solve_heat(&p, &g, &tg).unwrap(), &g, &window, &c).unwrap();
        assert_eq!(
            plain_boundary_norm(&a.trace_difference(&b), &g, &window).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let (g, w) = setup(1.0);
        assert!(weighted_norm_space(&vec![0.0; 17], &g, &w, 1)
            .unwrap()
            .is_zero());
        let slices = vec![vec![0.0; 17]; 17];
        assert!(weighted_norm_spacetime(&slices, &g, &w, 3)
            .unwrap()
            .is_zero());
    }

    #[test]
    fn exponential_free_hook_reduces_to_plain_norm() {
        let (g, w) = setup(1.0);
        let w0 = w.without_exponential();
        let v = weighted_norm_space(&vec![1.0; 17], &g, &w0, 0).unwrap();
        assert!((v.value() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn norms_are_homogeneous_of_degree_two() {
        let (g, w) = setup(2.0);
        let f = g.sample(|x| (PI * x[0]).sin());
        let f2: Vec<f64> = f.iter().map(|v| 2.0 * v).collect();
        for k in -2..=3 {
            let a = weighted_norm_space(&f, &g, &w, k).unwrap();
            let b = weighted_norm_space(&f2, &g, &w, k).unwrap();
            assert!((b.ln_ratio(&a) - 4f64.ln()).abs() < 1e-12);
        }
        assert!(weighted_norm_space(&f, &g, &w, 4).is_err());
    }

    #[test]
    fn norms_are_nonincreasing_in_s() {
        let g = build_grid(1, 16, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 2.0, 16).unwrap();
        let f = g.sample(|x| (PI * x[0]).sin());
        let slices = vec![f.clone(); 17];
        let mut last = f64::INFINITY;
        for s in [1.0, 2.0, 4.0, 8.0] {
            let w = build_weights(&g, &tg, WeightParams::new(1.0, s, 2.0, vec![-1.0])).unwrap();
            let v = weighted_norm_spacetime(&slices, &g, &w, 1).unwrap().ln();
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn boundary_norm_variants() {
        let (g, w) = setup(1.0);
        let trace = vec![vec![1.0; 15]];
        let a = weighted_boundary_norm(&trace, &g, &w, false).unwrap();
        let b = weighted_boundary_norm(&trace, &g, &w, true).unwrap();
        // d_nu beta = 4 at x = 1
        assert!((b.ln_ratio(&a) - 4f64.ln()).abs() < 1e-12);
        let plain = plain_boundary_norm(&trace, &g, w.timegrid()).unwrap();
        assert!((plain - 15.0 * 0.125).abs() < 1e-14);
        assert!(weighted_boundary_norm(&[vec![1.0; 3]], &g, &w, false).is_err());
    }

    #[test]
    fn non_finite_integrand_names_node() {
        let (g, w) = setup(1.0);
        let mut f = vec![0.0; 17];
        f[5] = f64::NAN;
        match weighted_norm_space(&f, &g, &w, 0) {
            Err(LabError::NonFinite { node, .. }) => assert_eq!(node, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = build_grid(2, 4, &[Face::East]).unwrap();
        let tg = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let f = SpaceTimeField::new(
            (0..=8)
                .map(|k| g.sample(|x| (k as f64 * 0.1).exp() * (1.0 + x[0] * x[1])))
                .collect(),
            tg,
        )
        .unwrap();
        let window = TimeGrid::window_of_solve(0.25, 1.0, 8).unwrap();
        let obs = extract_observations(&f, &g, &window, &vec![1.0; 25]).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let back = ObservationSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn noise_is_seeded() {
        use rand::SeedableRng;
        let g = build_grid(1, 8, &[Face::East]).unwrap();
        let snap = Snapshot::of_field(&vec![1.0; 9], &g, &vec![1.0; 9]).unwrap();
        let base = ObservationSet {
            flux_trace: vec![vec![0.0; 100]],
            snapshot: snap,
        };
        let mut a = base.clone();
        let mut b = base.clone();
        a.add_noise(0.1, false, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        b.add_noise(0.1, false, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshot, base.snapshot);
        let var: f64 = a.flux_trace[0].iter().map(|v| v * v).sum::<f64>() / 100.0;
        assert!(var > 0.005 && var < 0.02);
    }
}
