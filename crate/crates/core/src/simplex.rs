//! Dense two-phase primal simplex for `min cᵀx  s.t.  Ax = b, x ≥ 0`.
//!
//! Bland's rule picks both the entering column (smallest index with a
//! negative reduced cost) and the leaving row (smallest basic index among
//! ratio-test ties), so the method cannot cycle and the pivot sequence is a
//! pure function of the input bits. Every few pivots the tableau is rebuilt
//! from the original columns through a fresh inverse of the basis, so
//! round-off from long pivot sequences cannot accumulate, and the final
//! basic values come from an LU solve against the original columns.

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::DenseMatrix;

const COST_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 32;

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic variable index for each constraint row.
    pub basis: Vec<usize>,
    pub pivots: usize,
}

struct Tableau {
    rows: usize,
    width: usize,
    // rows × width coefficients followed by one rhs column, row-major.
    t: Vec<f64>,
    // The tableau as first built, for refactorization.
    orig: Vec<f64>,
    basis: Vec<usize>,
    // Current phase costs and their reduced costs, kept in step with `t`.
    cost: Vec<f64>,
    reduced: Vec<f64>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.width + 1) + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * (self.width + 1) + self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) -> Result<()> {
        if self.pivots >= self.max_pivots {
            return Err(Error::NoConvergence(self.pivots));
        }
        self.pivots += 1;
        let stride = self.width + 1;
        let p = self.at(r, c);
        for v in &mut self.t[r * stride..(r + 1) * stride] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.t[r * stride..(r + 1) * stride].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.at(i, c);
            if f == 0.0 {
                continue;
            }
            for (v, &pr) in self.t[i * stride..(i + 1) * stride].iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            self.t[i * stride + c] = 0.0;
        }
        let f = self.reduced[c];
        if f != 0.0 {
            for (v, &pr) in self.reduced.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            self.reduced[c] = 0.0;
        }
        self.basis[r] = c;
        if self.pivots % REFACTOR_EVERY == 0 {
            self.refactor()?;
        }
        Ok(())
    }

    /// Recomputes the tableau as `B⁻¹·[A | I | b]` for the current basis.
    fn refactor(&mut self) -> Result<()> {
        let stride = self.width + 1;
        let k = self.rows;
        let b = DenseMatrix::from_fn(k, k, |i, r| self.orig[i * stride + self.basis[r]]);
        let inv = linalg::inverse(&b).map_err(|_| Error::RankDeficient)?;
        let orig = DenseMatrix::new(k, stride, self.orig.clone())?;
        self.t = inv.matmul(&orig).as_slice().to_vec();
        for (r, &j) in self.basis.iter().enumerate() {
            for i in 0..k {
                self.t[i * stride + j] = if i == r { 1.0 } else { 0.0 };
            }
        }
        self.price();
        Ok(())
    }

    /// Recomputes reduced costs `c_j − c_Bᵀ B⁻¹ A_j` from the tableau.
    fn price(&mut self) {
        let stride = self.width + 1;
        let mut d = self.cost.clone();
        d.push(0.0);
        for i in 0..self.rows {
            let cb = self.cost[self.basis[i]];
            if cb == 0.0 {
                continue;
            }
            for (dj, &tij) in d.iter_mut().zip(&self.t[i * stride..(i + 1) * stride]) {
                *dj -= cb * tij;
            }
        }
        for &j in &self.basis {
            d[j] = 0.0;
        }
        self.reduced = d;
    }

    /// Runs Bland-rule pivots until no column below `allowed` improves `cost`.
    ///
    /// With `bounded` set the objective is known to be bounded below, so a
    /// candidate column without a usable pivot is round-off and is skipped.
    fn optimize(&mut self, cost: &[f64], allowed: usize, bounded: bool) -> Result<()> {
        self.cost = cost.to_vec();
        self.price();
        let mut from = 0;
        loop {
            let mut in_basis = vec![false; allowed];
            for &j in self.basis.iter().filter(|&&j| j < allowed) {
                in_basis[j] = true;
            }
            let Some(enter) = (from..allowed).find(|&j| self.reduced[j] < -COST_TOL && !in_basis[j])
            else {
                return Ok(());
            };
            let col_max = (0..self.rows).map(|i| self.at(i, enter).abs()).fold(0.0, f64::max);
            let pivot_tol = PIVOT_TOL.max(1e-7 * col_max);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, enter);
                if a <= pivot_tol {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br);
                        if (!tie && ratio < br) || (tie && self.basis[i] < self.basis[bi]) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                if bounded {
                    from = enter + 1;
                    continue;
                }
                return Err(Error::BadParams("linear program is unbounded".into()));
            };
            from = 0;
            self.pivot(r, enter)?;
        }
    }
}

/// Solves `min cᵀx` subject to `Ax = b`, `x ≥ 0`.
///
/// Infeasibility is reported as [`Error::RankDeficient`]: every program this
/// crate builds is feasible whenever its constraint matrix has full row rank.
pub fn solve_standard_form(
    a: &DenseMatrix,
    b: &[f64],
    c: &[f64],
    max_pivots: usize,
) -> Result<LpSolution> {
    solve_standard_form_from(a, b, c, None, max_pivots)
}

/// As [`solve_standard_form`], optionally starting from a basis of `k`
/// columns of `a` that is primal feasible. Phase 1 then has nothing to do.
pub fn solve_standard_form_from(
    a: &DenseMatrix,
    b: &[f64],
    c: &[f64],
    start: Option<&[usize]>,
    max_pivots: usize,
) -> Result<LpSolution> {
    let (k, p) = a.shape();
    if b.len() != k || c.len() != p {
        return Err(Error::BadDims(format!(
            "LP with {k}x{p} constraints, {} rhs, {} costs",
            b.len(),
            c.len()
        )));
    }
    let width = p + k;
    let stride = width + 1;
    let mut t = vec![0.0; k * stride];
    let mut signs = vec![1.0; k];
    for i in 0..k {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        signs[i] = s;
        for j in 0..p {
            t[i * stride + j] = s * a[(i, j)];
        }
        t[i * stride + p + i] = 1.0;
        t[i * stride + width] = s * b[i];
    }
    let mut tab = Tableau {
        rows: k,
        width,
        orig: t.clone(),
        t,
        basis: (p..p + k).collect(),
        cost: vec![0.0; width],
        reduced: vec![0.0; stride],
        pivots: 0,
        max_pivots,
    };
    if let Some(start) = start {
        if start.len() != k || start.iter().any(|&j| j >= p) {
            return Err(Error::BadDims(format!("starting basis {start:?} for {k}x{p} constraints")));
        }
        tab.basis = start.to_vec();
        tab.refactor()?;
        let scale = 1.0 + b.iter().map(|v| v.abs()).sum::<f64>();
        if (0..k).any(|i| tab.rhs(i) < -FEAS_TOL * scale) {
            return Err(Error::BadParams("starting basis is not feasible".into()));
        }
    }

    // Phase 1: drive the artificial variables to zero.
    let mut phase1_cost = vec![0.0; width];
    phase1_cost[p..].iter_mut().for_each(|v| *v = 1.0);
    tab.optimize(&phase1_cost, p, true)?;
    let infeasibility: f64 = (0..k)
        .filter(|&i| tab.basis[i] >= p)
        .map(|i| tab.rhs(i).abs())
        .sum();
    if infeasibility > FEAS_TOL * (1.0 + b.iter().map(|v| v.abs()).sum::<f64>()) {
        return Err(Error::RankDeficient);
    }
    // Pivot any remaining (zero-level) artificials out of the basis.
    for r in 0..k {
        if tab.basis[r] < p {
            continue;
        }
        let col = (0..p)
            .filter(|j| !tab.basis.contains(j))
            .max_by(|&x, &y| tab.at(r, x).abs().total_cmp(&tab.at(r, y).abs()));
        match col {
            Some(j) if tab.at(r, j).abs() > PIVOT_TOL => tab.pivot(r, j)?,
            _ => return Err(Error::RankDeficient),
        }
    }

    // Phase 2 on the original costs; artificial columns never re-enter.
    let mut phase2_cost = c.to_vec();
    phase2_cost.resize(width, 0.0);
    let bounded = c.iter().all(|&v| v >= 0.0);
    tab.optimize(&phase2_cost, p, bounded)?;

    // Recompute basic values from the original columns.
    let basis_mat = DenseMatrix::from_fn(k, k, |i, r| signs[i] * a[(i, tab.basis[r])]);
    let rhs: Vec<f64> = (0..k).map(|i| signs[i] * b[i]).collect();
    let xb = linalg::solve(&basis_mat, &rhs).map_err(|_| Error::RankDeficient)?;
    let mut x = vec![0.0; p];
    for (r, &j) in tab.basis.iter().enumerate() {
        x[j] = xb[r].max(0.0);
    }
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution {
        x,
        objective,
        basis: tab.basis,
        pivots: tab.pivots,
    })
}
