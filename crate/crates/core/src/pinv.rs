//! Left inverses of tall full-rank matrices.
//!
//! [`min_inf_pinv`] returns the left inverse with the smallest induced row
//! norm. The constraint `A†A = I` couples only entries within one row of
//! `A†`, so the problem splits into `n` independent l1 minimizations, one per
//! row, each solved as a linear program by [`min_l1_row`]. [`ls_pinv`] is the
//! ordinary orthogonal-projection inverse `(AᵀA)⁻¹Aᵀ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::{norm_row_induced, DenseMatrix};
use crate::simplex;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PinvResult {
    /// n×m left inverse.
    pub pinv: DenseMatrix,
    pub inf_norm: f64,
    pub per_row_l1: Vec<f64>,
}

fn pivot_budget(m: usize, n: usize) -> usize {
    50 * (m + n)
}

/// Minimizes `‖z‖₁` subject to `zᵀA = e_iᵀ`.
///
/// Written in standard form with `z = z₊ − z₋`: minimize `1ᵀ(z₊ + z₋)`
/// subject to `Aᵀz₊ − Aᵀz₋ = e_i`. When several optimal vertices exist the
/// one returned is whichever Bland's rule reaches first.
pub fn min_l1_row(a: &DenseMatrix, i: usize) -> Result<Vec<f64>> {
    linalg::ensure_full_column_rank(a)?;
    solve_row(a, i)
}

fn solve_row(a: &DenseMatrix, i: usize) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    if i >= n {
        return Err(Error::BadDims(format!("row {i} of a {n}-row inverse")));
    }
    let constraints = DenseMatrix::from_fn(n, 2 * m, |r, c| {
        if c < m {
            a[(c, r)]
        } else {
            -a[(c - m, r)]
        }
    });
    let mut rhs = vec![0.0; n];
    rhs[i] = 1.0;
    let cost = vec![1.0; 2 * m];
    let start = feasible_start(a, &rhs)?;
    let sol = simplex::solve_standard_form_from(&constraints, &rhs, &cost, Some(&start), pivot_budget(m, n))?;
    Ok((0..m).map(|k| sol.x[k] - sol.x[k + m]).collect())
}

/// Rows of `a` chosen greedily by largest residual after projecting out the
/// rows already taken (Gram-Schmidt with pivoting), giving a well-conditioned
/// n×n submatrix.
fn well_conditioned_rows(a: &DenseMatrix) -> Result<Vec<usize>> {
    let (m, n) = a.shape();
    let mut resid: Vec<Vec<f64>> = (0..m).map(|k| a.row(k).to_vec()).collect();
    let mut chosen = Vec::with_capacity(n);
    let scale = a.norm_max().max(f64::MIN_POSITIVE);
    for _ in 0..n {
        let (best, norm) = (0..m)
            .filter(|k| !chosen.contains(k))
            .map(|k| (k, resid[k].iter().map(|v| v * v).sum::<f64>().sqrt()))
            .fold((usize::MAX, -1.0), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
        if best == usize::MAX || norm <= linalg::RANK_TOL * scale {
            return Err(Error::RankDeficient);
        }
        chosen.push(best);
        let q: Vec<f64> = resid[best].iter().map(|v| v / norm).collect();
        for r in resid.iter_mut() {
            let dot: f64 = r.iter().zip(&q).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(&q).for_each(|(x, y)| *x -= dot * y);
        }
    }
    Ok(chosen)
}

/// A feasible basis for the row program: `n` independent columns of `Aᵀ`,
/// each taken with the sign that makes its basic value nonnegative.
fn feasible_start(a: &DenseMatrix, rhs: &[f64]) -> Result<Vec<usize>> {
    let m = a.rows();
    let rows = well_conditioned_rows(a)?;
    let n = rows.len();
    let b = DenseMatrix::from_fn(n, n, |r, c| a[(rows[c], r)]);
    let xb = linalg::solve(&b, rhs).map_err(|_| Error::RankDeficient)?;
    Ok(rows.iter().zip(&xb).map(|(&k, &v)| if v < 0.0 { k + m } else { k }).collect())
}

/// The left inverse of `a` with minimum induced l∞ norm.
///
/// Rows are solved independently (in parallel on the current rayon pool)
/// and collected in row order, so the result is identical to a sequential
/// evaluation.
pub fn min_inf_pinv(a: &DenseMatrix) -> Result<PinvResult> {
    linalg::ensure_full_column_rank(a)?;
    let n = a.cols();
    let rows = (0..n)
        .into_par_iter()
        .map(|i| solve_row(a, i))
        .collect::<Result<Vec<_>>>()?;
    let pinv = DenseMatrix::from_rows(&rows)?;
    let per_row_l1: Vec<f64> = (0..n).map(|i| pinv.row_l1(i)).collect();
    let inf_norm = per_row_l1.iter().copied().fold(0.0, f64::max);
    Ok(PinvResult {
        pinv,
        inf_norm,
        per_row_l1,
    })
}

/// `(AᵀA)⁻¹Aᵀ`, the left inverse whose range complement is orthogonal.
pub fn ls_pinv(a: &DenseMatrix) -> Result<DenseMatrix> {
    linalg::ensure_full_column_rank(a)?;
    let at = a.transpose();
    let gram = at.matmul(a);
    let gram_inv = linalg::inverse(&gram).map_err(|_| Error::RankDeficient)?;
    Ok(gram_inv.matmul(&at))
}

/// Induced l∞ norm of the least-squares inverse; an upper bound for
/// [`PinvResult::inf_norm`].
pub fn ls_pinv_inf_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(norm_row_induced(&ls_pinv(a)?))
}
