//! Twin-solve stability experiment: coefficient error against observation
//! distance, weighted and unweighted, over a family of perturbations.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::experiment::{check_admissible, perturbation, twin_solve, Setup, Shape};
use crate::grid::{discrete_gradient, Grid, ScalarField};
use crate::logspace::LogScalar;
use crate::observe::{
    flux_trace, plain_boundary_norm, plain_norm_space, plain_norm_space_vec,
    weighted_boundary_norm, weighted_norm_space, weighted_norm_space_vec,
};
use crate::poincare::TransportBase;
use crate::report::{fmt_value, EstimateReport, ReportParams, Term};
use crate::weights::WeightSet;

/// `c`, `c_ref` and `gamma = c - c_ref`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientPair {
    pub c: ScalarField,
    pub c_ref: ScalarField,
    pub gamma: ScalarField,
}

impl CoefficientPair {
    pub fn new(grid: &Grid, c: &[f64], c_ref: &[f64]) -> Result<Self> {
        grid.check_len(c, "conductivity")?;
        grid.check_len(c_ref, "reference conductivity")?;
        for (field, what) in [(c, "conductivity"), (c_ref, "reference conductivity")] {
            if let Some(i) = field.iter().position(|&v| v.is_nan() || v <= 0.0) {
                return Err(LabError::Precondition(format!(
                    "{what} must be positive, got {} at node {i}",
                    field[i]
                )));
            }
        }
        let gamma: Vec<f64> = c.iter().zip(c_ref).map(|(a, b)| a - b).collect();
        check_admissible(grid, &gamma)?;
        Ok(CoefficientPair {
            c: c.to_vec(),
            c_ref: c_ref.to_vec(),
            gamma,
        })
    }

    /// `c_ref + gamma`.
    pub fn perturbed(grid: &Grid, c_ref: &[f64], gamma: &[f64]) -> Result<Self> {
        let c: Vec<f64> = c_ref.iter().zip(gamma).map(|(a, b)| a + b).collect();
        CoefficientPair::new(grid, &c, c_ref)
    }

    pub fn swapped(&self) -> Self {
        CoefficientPair {
            c: self.c_ref.clone(),
            c_ref: self.c.clone(),
            gamma: self.gamma.iter().map(|v| -v).collect(),
        }
    }
}

/// The coefficient-error inequality with weighted and unweighted norms.
///
/// `weighted` carries `d_nu beta` in the boundary term, `weighted_flat` drops
/// it, and `plain` uses unweighted norms on both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub weighted: EstimateReport,
    pub weighted_flat: EstimateReport,
    pub plain: EstimateReport,
}

pub fn stability_sides(
    pair: &CoefficientPair,
    setup: &Setup,
    weights: &WeightSet,
) -> Result<StabilityReport> {
    let grid = &setup.grid;
    let twin = twin_solve(setup, &pair.c, &pair.c_ref)?;
    let base_snap = twin.base_snapshot(setup)?;
    TransportBase::new(&base_snap.q, grid, weights)?.require_nondegenerate(&pair.gamma, grid)?;
    let u = twin.u_snapshot(setup)?;
    let trace = flux_trace(&twin.y, grid, &setup.window)?;
    let grad_gamma = discrete_gradient(&pair.gamma, grid);

    let weighted_lhs = vec![
        Term::new("gamma", weighted_norm_space(&pair.gamma, grid, weights, 1)?),
        Term::new("grad_gamma", weighted_norm_space_vec(&grad_gamma, grid, weights, 1)?),
    ];
    let snapshots = vec![
        Term::new("grad_lap_u", weighted_norm_space_vec(&u.grad_lap, grid, weights, 0)?),
        Term::new("lap_u", weighted_norm_space(&u.lap, grid, weights, 0)?),
        Term::new("grad_u", weighted_norm_space_vec(&u.grad, grid, weights, 0)?),
    ];
    let with_boundary = |flag: bool| -> Result<Vec<Term>> {
        let mut terms = vec![Term::new(
            "boundary",
            weighted_boundary_norm(&trace, grid, weights, flag)?,
        )];
        terms.extend(snapshots.iter().cloned());
        Ok(terms)
    };
    let plain = |v: f64| LogScalar::from_value(v);
    let plain_lhs = vec![
        Term::new("gamma", plain(plain_norm_space(&pair.gamma, grid)?)),
        Term::new("grad_gamma", plain(plain_norm_space_vec(&grad_gamma, grid)?)),
    ];
    let plain_rhs = vec![
        Term::new("boundary", plain(plain_boundary_norm(&trace, grid, &setup.window)?)),
        Term::new("grad_lap_u", plain(plain_norm_space_vec(&u.grad_lap, grid)?)),
        Term::new("lap_u", plain(plain_norm_space(&u.lap, grid)?)),
        Term::new("grad_u", plain(plain_norm_space_vec(&u.grad, grid)?)),
    ];
    let params = ReportParams {
        s: weights.s(),
        lambda: weights.lambda(),
        dim: grid.dim(),
        n: grid.n(),
        steps: setup.window.steps(),
    };
    Ok(StabilityReport {
        weighted: EstimateReport::new("stability", weighted_lhs.clone(), with_boundary(true)?, params),
        weighted_flat: EstimateReport::new("stability_flat", weighted_lhs, with_boundary(false)?, params),
        plain: EstimateReport::new("stability_plain", plain_lhs, plain_rhs, params),
    })
}

/// One perturbation of the sweep family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Member {
    pub shape: Shape,
    pub eps: f64,
}

impl Member {
    pub fn name(&self) -> String {
        format!("{}_eps{:e}", self.shape.name(), self.eps)
    }
}

/// Four shapes times the amplitudes `1e-3, 1e-2, 1e-1`.
pub fn default_family() -> Vec<Member> {
    let mut out = Vec::new();
    for shape in Shape::FAMILY {
        for eps in [1e-3, 1e-2, 1e-1] {
            out.push(Member { shape, eps });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub member: Member,
    pub report: StabilityReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilitySummary {
    /// Largest unweighted ratio, the empirical Lipschitz constant.
    pub max_plain_ratio: f64,
    pub argmax_plain: String,
    pub max_weighted_ln_ratio: f64,
    pub argmax_weighted: String,
    /// Slope of `ln lhs` against `ln rhs` (unweighted) over all members.
    pub slope: f64,
    /// The same slope restricted to each shape's amplitude scalings.
    pub slope_by_shape: Vec<(String, f64)>,
    /// Members left out because both sides vanish.
    pub excluded: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilitySweep {
    pub rows: Vec<SweepRow>,
    pub summary: StabilitySummary,
}

/// Least-squares slope of `y` against `x`.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn log_slope(rows: &[&SweepRow]) -> f64 {
    let x: Vec<f64> = rows.iter().map(|r| r.report.plain.rhs_total.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.report.plain.lhs_total.ln()).collect();
    regression_slope(&x, &y)
}

pub fn stability_sweep(
    family: &[Member],
    c_ref: &[f64],
    setup: &Setup,
    weights: &WeightSet,
) -> Result<StabilitySweep> {
    let (kept, zero): (Vec<Member>, Vec<Member>) = family.iter().partition(|m| m.eps != 0.0);
    if kept.len() < 2 {
        return Err(LabError::Precondition(
            "the sweep needs at least two nonzero members".into(),
        ));
    }
    let rows: Vec<SweepRow> = kept
        .par_iter()
        .map(|&member| {
            let gamma = perturbation(&setup.grid, member.eps, member.shape);
            let pair = CoefficientPair::perturbed(&setup.grid, c_ref, &gamma)?;
            Ok(SweepRow {
                member,
                report: stability_sides(&pair, setup, weights)?,
            })
        })
        .collect::<Result<_>>()?;

    let best = |key: &dyn Fn(&SweepRow) -> f64| {
        rows.iter()
            .map(|r| (key(r), r.member.name()))
            .fold((f64::NEG_INFINITY, String::new()), |b, x| if x.0 > b.0 { x } else { b })
    };
    let (max_plain_ratio, argmax_plain) = best(&|r| r.report.plain.ratio);
    let (max_weighted_ln_ratio, argmax_weighted) = best(&|r| r.report.weighted.ln_ratio);

    let mut slope_by_shape = Vec::new();
    for shape in Shape::FAMILY {
        let subset: Vec<&SweepRow> = rows.iter().filter(|r| r.member.shape == shape).collect();
        if subset.len() >= 2 {
            slope_by_shape.push((shape.name(), log_slope(&subset)));
        }
    }
    let all: Vec<&SweepRow> = rows.iter().collect();
    let summary = StabilitySummary {
        max_plain_ratio,
        argmax_plain,
        max_weighted_ln_ratio,
        argmax_weighted,
        slope: log_slope(&all),
        slope_by_shape,
        excluded: zero.iter().map(Member::name).collect(),
    };
    Ok(StabilitySweep { rows, summary })
}

impl StabilitySweep {
    /// Rows `member,shape,eps,lhs,rhs_weighted,rhs_plain,ratio,...`: `lhs`
    /// and `ratio` are the weighted ones, followed by their logarithms and the
    /// unweighted left side and ratio.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "member,shape,eps,lhs,rhs_weighted,rhs_plain,ratio,ln_lhs,ln_rhs_weighted,ln_ratio,lhs_plain,ratio_plain"
        )?;
        for (k, row) in self.rows.iter().enumerate() {
            let (w, p) = (&row.report.weighted, &row.report.plain);
            writeln!(
                out,
                "{k},{},{},{},{},{},{},{},{},{},{},{}",
                row.member.shape.name(),
                fmt_value(row.member.eps),
                fmt_value(w.lhs_total.value()),
                fmt_value(w.rhs_total.value()),
                fmt_value(p.rhs_total.value()),
                fmt_value(w.ratio),
                fmt_value(w.lhs_total.ln()),
                fmt_value(w.rhs_total.ln()),
                fmt_value(w.ln_ratio),
                fmt_value(p.lhs_total.value()),
                fmt_value(p.ratio),
            )?;
        }
        Ok(())
    }
}
