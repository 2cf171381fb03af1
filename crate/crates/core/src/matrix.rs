//! Dense row-major matrices and the induced norms used throughout the crate.
//!
//! The column norm `‖M‖₁` is the largest column absolute sum, the row norm
//! `‖M‖∞` the largest row absolute sum, and the symmetrized norm `‖M‖ₛ` is
//! the larger of the two. Absolute sums go through [`pairwise_sum`] so the
//! result does not depend on traversal order beyond rounding of a balanced
//! reduction tree.

use std::fmt::Write as _;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column l1 norms at or below this are treated as degenerate.
pub const ZERO_COLUMN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::BadDims(format!("{rows}x{cols} matrix is empty")));
        }
        if data.len() != rows * cols {
            return Err(Error::BadDims(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: k / cols,
                col: k % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::BadDims("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Stacks equal-length vectors as columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let c = columns.len();
        let r = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|col| col.len() != r) {
            return Err(Error::BadDims("ragged columns".into()));
        }
        let mut data = vec![0.0; r * c];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * c + j] = v;
            }
        }
        Self::new(r, c, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Mᵀ v` without materializing the transpose.
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_matvec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn scale(&self, c: f64) -> DenseMatrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        self.zip_map(other, |a, b| a - b)
    }

    /// Largest absolute entry.
    pub fn norm_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn column_l1(&self, j: usize) -> f64 {
        pairwise_sum(&(0..self.rows).map(|i| self[(i, j)].abs()).collect::<Vec<_>>())
    }

    pub fn row_l1(&self, i: usize) -> f64 {
        pairwise_sum(&self.row(i).iter().map(|v| v.abs()).collect::<Vec<_>>())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One row per line, comma separated, shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: lineno + 1,
                        msg: format!("{tok:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 0,
                msg: "no rows".into(),
            });
        }
        Self::from_rows(&rows)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Balanced-tree summation; error grows as O(log n) instead of O(n).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Induced l1 norm: largest column absolute sum.
pub fn norm_col_induced(m: &DenseMatrix) -> f64 {
    (0..m.cols()).map(|j| m.column_l1(j)).fold(0.0, f64::max)
}

/// Induced l∞ norm: largest row absolute sum.
pub fn norm_row_induced(m: &DenseMatrix) -> f64 {
    (0..m.rows()).map(|i| m.row_l1(i)).fold(0.0, f64::max)
}

pub fn norm_sym(m: &DenseMatrix) -> f64 {
    norm_col_induced(m).max(norm_row_induced(m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub col_norm: f64,
    pub row_norm: f64,
    pub sym_norm: f64,
    pub max_norm: f64,
}

impl NormReport {
    pub fn of(m: &DenseMatrix) -> Self {
        let col_norm = norm_col_induced(m);
        let row_norm = norm_row_induced(m);
        Self {
            col_norm,
            row_norm,
            sym_norm: col_norm.max(row_norm),
            max_norm: m.norm_max(),
        }
    }
}

/// Splits `M` into entrywise positive and negative parts, `M = M₊ − M₋`.
pub fn split_pos_neg(m: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    (m.map(|v| v.max(0.0)), m.map(|v| (-v).max(0.0)))
}

/// `φ_α(v) = max(v − α, 0)` elementwise.
pub fn relu_offset(v: &[f64], alpha: f64) -> Vec<f64> {
    v.iter().map(|&x| (x - alpha).max(0.0)).collect()
}

/// Scales every column to unit l1 norm.
pub fn col_normalize(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = m.clone();
    for j in 0..m.cols() {
        let norm = m.column_l1(j);
        if norm <= ZERO_COLUMN_TOL {
            return Err(Error::ZeroColumn(j));
        }
        for i in 0..m.rows() {
            out[(i, j)] /= norm;
        }
    }
    Ok(out)
}
