//! Thin bridge to nalgebra for the dense factorizations we need: inversion,
//! square solves and a column-pivoted rank test.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Relative threshold on |R_kk| in the pivoted QR rank test.
pub const RANK_TOL: f64 = 1e-10;

pub(crate) fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Result<DenseMatrix> {
    let out = DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::SingularMatrix)
    }
}

pub fn inverse(m: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(Error::BadDims(format!("inverse of {}x{}", m.rows(), m.cols())));
    }
    let inv = to_na(m).try_inverse().ok_or(Error::SingularMatrix)?;
    from_na(&inv)
}

/// Solves `M x = b` for square `M` by partial-pivot LU.
pub fn solve(m: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = to_na(m).lu();
    let rhs = nalgebra::DVector::from_column_slice(b);
    let x = lu.solve(&rhs).ok_or(Error::SingularMatrix)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x.iter().copied().collect())
    } else {
        Err(Error::SingularMatrix)
    }
}

/// Pivoted-QR rank test: full column rank iff every |R_kk| exceeds
/// `RANK_TOL` times the largest column 2-norm.
pub fn has_full_column_rank(m: &DenseMatrix) -> bool {
    if m.rows() < m.cols() {
        return false;
    }
    let a = to_na(m);
    let scale = a
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max);
    if scale == 0.0 {
        return false;
    }
    let r = a.col_piv_qr().r();
    (0..m.cols()).all(|k| r[(k, k)].abs() > RANK_TOL * scale)
}

pub fn ensure_full_column_rank(m: &DenseMatrix) -> Result<()> {
    if has_full_column_rank(m) {
        Ok(())
    } else {
        Err(Error::RankDeficient)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_detection() {
        let full = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(has_full_column_rank(&full));
        let dup = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert!(!has_full_column_rank(&dup));
        let wide = DenseMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        assert!(!has_full_column_rank(&wide));
        assert!(!has_full_column_rank(&DenseMatrix::zeros(3, 2)));
    }

    #[test]
    fn inverse_and_solve() {
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let inv = inverse(&a).unwrap();
        let prod = a.matmul(&inv);
        assert!(prod.sub(&DenseMatrix::identity(2)).norm_max() < 1e-14);
        let x = solve(&a, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        let sing = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(inverse(&sing), Err(Error::SingularMatrix)));
    }
}
