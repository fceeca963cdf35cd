//! Linear solvers for the Crank–Nicolson systems.

use crate::error::{LabError, Result};
use crate::grid::SparseOp;

/// Symmetric tridiagonal matrix stored by diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    /// `off[i]` couples unknowns `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.off[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    /// Thomas algorithm; no pivoting, so the matrix must be diagonally dominant
    /// or SPD.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        assert_eq!(rhs.len(), n);
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        for i in 0..n {
            if i > 0 {
                denom = self.diag[i] - self.off[i - 1] * c[i - 1];
            }
            if denom == 0.0 || !denom.is_finite() {
                return Err(LabError::SolverStalled(format!(
                    "zero pivot in tridiagonal solve at row {i}"
                )));
            }
            if i + 1 < n {
                c[i] = self.off[i] / denom;
            }
            let prev = if i > 0 {
                self.off[i - 1] * d[i - 1]
            } else {
                0.0
            };
            d[i] = (rhs[i] - prev) / denom;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Ok(d)
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unpreconditioned CG for an SPD operator, stopping at
/// `||r|| <= rel_tol * ||b||`.
pub fn conjugate_gradient(
    op: &SparseOp,
    rhs: &[f64],
    x0: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let n = rhs.len();
    let b_norm = dot(rhs, rhs).sqrt();
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let ax = op.apply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..=max_iter {
        let rel = rr.sqrt() / b_norm;
        if !rel.is_finite() {
            return Err(LabError::non_finite("CG residual", it));
        }
        if rel <= rel_tol {
            return Ok((
                x,
                CgStats {
                    iterations: it,
                    relative_residual: rel,
                },
            ));
        }
        if it == max_iter {
            break;
        }
        let ap = op.apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(LabError::SolverStalled(format!(
                "operator not positive definite (p^T A p = {pap:e})"
            )));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(LabError::SolverStalled(format!(
        "CG residual {:.3e} above {rel_tol:e} after {max_iter} iterations",
        rr.sqrt() / b_norm
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Face, SparseOp};

    #[test]
    fn thomas_matches_product() {
        let t = Tridiagonal {
            diag: vec![4.0, 5.0, 6.0, 7.0],
            off: vec![-1.0, 2.0, -0.5],
        };
        let x = vec![1.0, -2.0, 0.5, 3.0];
        let b = t.mul(&x);
        let y = t.solve(&b).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_solves_shifted_laplacian() {
        let g = build_grid(2, 8, &[Face::East]).unwrap();
        let lap = g.laplacian_op();
        let interior = g.interior_nodes();
        // restrict (I - 0.01 L) to interior unknowns
        let mut pos = vec![usize::MAX; g.num_nodes()];
        for (k, &i) in interior.iter().enumerate() {
            pos[i] = k;
        }
        let dense: Vec<Vec<(usize, f64)>> = interior
            .iter()
            .map(|&i| {
                let mut row: Vec<(usize, f64)> = lap
                    .row(i)
                    .filter(|&(j, _)| pos[j] != usize::MAX)
                    .map(|(j, a)| (pos[j], -0.01 * a))
                    .collect();
                row.push((pos[i], 1.0));
                row
            })
            .collect();
        let op = SparseOp::from_rows(dense);
        let x_true: Vec<f64> = (0..interior.len()).map(|k| (k as f64).sin()).collect();
        let b = op.apply(&x_true);
        let (x, stats) = conjugate_gradient(&op, &b, None, 1e-12, 200).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_reports_stall() {
        let op = SparseOp::from_rows(vec![vec![(0, 4.0), (1, 1.0)], vec![(0, 1.0), (1, 3.0)]]);
        assert!(matches!(
            conjugate_gradient(&op, &[1.0, 2.0], None, 1e-30, 0),
            Err(LabError::SolverStalled(_))
        ));
    }
}
