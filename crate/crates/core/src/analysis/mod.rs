//! Ground-truth-aware diagnostics.
//!
//! Everything here assumes the true feature matrix `A*` is known, which is
//! only the case for synthetic runs. An iterate is written as
//! `A = A*(Σ + E) + N` with `Σ` diagonal, `E` zero on the diagonal and the
//! columns of `N` orthogonal to `col(A*)`.

mod oracle;
mod recurrence;

pub use oracle::*;
pub use recurrence::*;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::Sample;
use crate::linalg;
use crate::matrix::{
    col_normalize, norm_col_induced, norm_row_induced, norm_sym, split_pos_neg, DenseMatrix,
};
use crate::pinv::{ls_pinv, min_inf_pinv};

/// Weight of `‖E₋‖ₛ` in the coupled potential, `(√9856 − 84)/2`.
pub const BETA: f64 = 7.638694583963426;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub sigma: Vec<f64>,
    pub e_mat: DenseMatrix,
    pub n_mat: DenseMatrix,
}

impl Decomposition {
    /// `Σ + E` as one matrix.
    pub fn coefficients(&self) -> DenseMatrix {
        let mut b = self.e_mat.clone();
        for (i, s) in self.sigma.iter().enumerate() {
            b[(i, i)] = *s;
        }
        b
    }

    pub fn reconstruct(&self, a_star: &DenseMatrix) -> DenseMatrix {
        a_star.matmul(&self.coefficients()).add(&self.n_mat)
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn decompose(a: &DenseMatrix, a_star: &DenseMatrix) -> Result<Decomposition> {
    if a.shape() != a_star.shape() {
        return Err(Error::BadDims(format!(
            "iterate is {:?}, ground truth is {:?}",
            a.shape(),
            a_star.shape()
        )));
    }
    let b = ls_pinv(a_star)?.matmul(a);
    let n_mat = a.sub(&a_star.matmul(&b));
    let sigma = b.diag();
    let mut e_mat = b;
    for i in 0..sigma.len() {
        e_mat[(i, i)] = 0.0;
    }
    Ok(Decomposition {
        sigma,
        e_mat,
        n_mat,
    })
}

/// `max_i ‖A_i/‖A_i‖₁ − A*_i‖₁`.
pub fn col_error(a: &DenseMatrix, a_star: &DenseMatrix) -> Result<f64> {
    if a.shape() != a_star.shape() {
        return Err(Error::BadDims(format!("{:?} vs {:?}", a.shape(), a_star.shape())));
    }
    let diff = col_normalize(a)?.sub(a_star);
    Ok(norm_col_induced(&diff))
}

pub fn coupled_potential(decomp: &Decomposition) -> f64 {
    let (pos, neg) = split_pos_neg(&decomp.e_mat);
    norm_sym(&pos) + BETA * norm_sym(&neg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub e_pos_sym: f64,
    pub e_neg_sym: f64,
    pub potential: f64,
    pub n_inf: f64,
    pub n_l1: f64,
    pub col_err: f64,
}

impl IterRecord {
    pub const CSV_HEADER: &'static str =
        "t,sigma_min,sigma_max,e_pos_sym,e_neg_sym,potential,n_inf,n_l1,col_err";

    pub fn measure(t: usize, a: &DenseMatrix, a_star: &DenseMatrix) -> Result<IterRecord> {
        let d = decompose(a, a_star)?;
        let (pos, neg) = split_pos_neg(&d.e_mat);
        let e_pos_sym = norm_sym(&pos);
        let e_neg_sym = norm_sym(&neg);
        Ok(IterRecord {
            t,
            sigma_min: d.sigma_min(),
            sigma_max: d.sigma_max(),
            e_pos_sym,
            e_neg_sym,
            potential: e_pos_sym + BETA * e_neg_sym,
            n_inf: norm_row_induced(&d.n_mat),
            n_l1: norm_col_induced(&d.n_mat),
            col_err: col_error(a, a_star)?,
        })
    }

    /// One CSV line without the trailing newline; floats use the shortest
    /// representation that round-trips.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.t,
            self.sigma_min,
            self.sigma_max,
            self.e_pos_sym,
            self.e_neg_sym,
            self.potential,
            self.n_inf,
            self.n_l1,
            self.col_err
        )
    }

    pub fn from_csv_row(line: &str) -> Result<IterRecord> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 9 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("expected 9 fields, found {}", f.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("field {k}: {:?} is not a number", f[k]),
            })
        };
        Ok(IterRecord {
            t: f[0].parse().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("bad iteration index {:?}", f[0]),
            })?,
            sigma_min: num(1)?,
            sigma_max: num(2)?,
            e_pos_sym: num(3)?,
            e_neg_sym: num(4)?,
            potential: num(5)?,
            n_inf: num(6)?,
            n_l1: num(7)?,
            col_err: num(8)?,
        })
    }
}

/// Outcome of one lemma inequality: `slack = bound − value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub value: f64,
    pub bound: f64,
    pub slack: f64,
    pub holds: bool,
}

impl BoundCheck {
    pub fn new(value: f64, bound: f64) -> Self {
        Self::with_tolerance(value, bound, 0.0)
    }

    /// As [`BoundCheck::new`], passing when `slack ≥ −tol`.
    pub fn with_tolerance(value: f64, bound: f64, tol: f64) -> Self {
        let slack = bound - value;
        BoundCheck {
            value,
            bound,
            slack,
            holds: slack >= -tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VBoundReport {
    /// `‖V₊‖ₛ` against `K₁‖E₋‖ₛ + K₂‖E₊‖ₛ`.
    pub pos: BoundCheck,
    /// `‖V₋‖ₛ` against `K₁‖E₊‖ₛ + K₂‖E₋‖ₛ`.
    pub neg: BoundCheck,
    /// `‖V‖ₛ`.
    pub total: BoundCheck,
    /// `max_i |V_ii|`.
    pub diag: BoundCheck,
}

impl VBoundReport {
    pub fn holds(&self) -> bool {
        self.pos.holds && self.neg.holds && self.total.holds && self.diag.holds
    }

    pub fn worst_slack(&self) -> f64 {
        [self.pos, self.neg, self.total, self.diag]
            .iter()
            .map(|c| c.slack)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Checks the four bounds on `V = (Σ + E)⁻¹ − Σ⁻¹` given `‖E‖ₛ < ℓ_e` and
/// `Σ ⪰ (1 − ℓ)I`.
///
/// The leading constant of the first two bounds is
/// `(1 − ℓ_e)/((1 − ℓ)²(1 − ℓ_e − ℓ))`, which is what the first-order term
/// `‖Σ⁻¹E₋Σ⁻¹‖ₛ ≤ ‖E₋‖ₛ/(1 − ℓ)²` plus the higher-order remainder adds up to.
pub fn check_v_bounds(sigma: &[f64], e: &DenseMatrix, ell: f64, ell_e: f64) -> Result<VBoundReport> {
    let n = sigma.len();
    if e.shape() != (n, n) {
        return Err(Error::BadDims(format!("E is {:?}, Σ has {n} entries", e.shape())));
    }
    let denom = 1.0 - ell_e - ell;
    if !(ell >= 0.0 && ell < 1.0 && ell_e > 0.0 && denom > 0.0) {
        return Err(Error::HypothesisViolated(format!(
            "need 0 <= ell < 1, ell_e > 0, ell + ell_e < 1 (ell={ell}, ell_e={ell_e})"
        )));
    }
    let e_norm = norm_sym(e);
    if e_norm >= ell_e {
        return Err(Error::HypothesisViolated(format!("‖E‖s = {e_norm} >= ell_e = {ell_e}")));
    }
    if let Some(s) = sigma.iter().find(|&&s| s < 1.0 - ell) {
        return Err(Error::HypothesisViolated(format!("Σ entry {s} < 1 - ell = {}", 1.0 - ell)));
    }
    if (0..n).any(|i| e[(i, i)] != 0.0) {
        return Err(Error::HypothesisViolated("E has a nonzero diagonal entry".into()));
    }
    let mut b = e.clone();
    for (i, s) in sigma.iter().enumerate() {
        b[(i, i)] = *s;
    }
    let mut v = linalg::inverse(&b)?;
    for (i, s) in sigma.iter().enumerate() {
        v[(i, i)] -= 1.0 / s;
    }
    let (e_pos, e_neg) = split_pos_neg(e);
    let (v_pos, v_neg) = split_pos_neg(&v);
    let (ep, en) = (norm_sym(&e_pos), norm_sym(&e_neg));
    let sq = (1.0 - ell) * (1.0 - ell);
    let k1 = (1.0 - ell_e) / (sq * denom);
    let k2 = ell / (sq * denom);
    let diag_max = (0..n).map(|i| v[(i, i)].abs()).fold(0.0, f64::max);
    Ok(VBoundReport {
        pos: BoundCheck::new(norm_sym(&v_pos), k1 * en + k2 * ep),
        neg: BoundCheck::new(norm_sym(&v_neg), k1 * ep + k2 * en),
        total: BoundCheck::new(norm_sym(&v), ell_e * (1.0 - ell_e) / (sq * denom)),
        diag: BoundCheck::new(diag_max, ell * ell_e / (sq * denom)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiReport {
    /// `‖A†‖∞‖N‖∞/(1 − 2ℓ) + C_ν‖A†‖∞`.
    pub gamma: f64,
    pub pinv_norm: f64,
    pub star_pinv_norm: f64,
    /// Largest `|ξ_i|` over the supplied samples.
    pub max_xi: f64,
    /// `max_xi ≤ γ`.
    pub holds: bool,
    /// Present when `‖N‖∞‖(A*)†‖∞ < 1/8`: whether `‖A†‖∞ ≤ 2‖(A*)†‖∞` and
    /// `γ ≤ 3‖(A*)†‖∞(‖N‖∞ + C_ν)` both hold.
    pub small_noise_holds: Option<bool>,
}

/// `ξ = −A†N(Σ + E)⁻¹x* + A†ν` for each sample.
pub fn xi_values(
    pinv: &DenseMatrix,
    decomp: &Decomposition,
    samples: &[Sample],
) -> Result<Vec<Vec<f64>>> {
    let z = linalg::inverse(&decomp.coefficients())?;
    let pn = pinv.matmul(&decomp.n_mat);
    Ok(samples
        .iter()
        .map(|s| {
            let zx = z.matvec(&s.x_star);
            let a = pn.matvec(&zx);
            let b = pinv.matvec(&s.nu);
            a.iter().zip(&b).map(|(u, v)| v - u).collect()
        })
        .collect())
}

/// Evaluates the bound on the decode perturbation `ξ` over `samples`.
///
/// The hypotheses `‖E‖ₛ < ℓ ≤ 1/8` and `Σ ⪰ (1 − ℓ)I` are checked against the
/// decomposition; a violation is an error naming the failing hypothesis.
pub fn check_xi_bound(
    a: &DenseMatrix,
    a_star: &DenseMatrix,
    decomp: &Decomposition,
    c_nu: f64,
    ell: f64,
    samples: &[Sample],
) -> Result<XiReport> {
    let mut failed = Vec::new();
    if ell > 0.125 {
        failed.push(format!("ell = {ell} > 1/8"));
    }
    let e_norm = norm_sym(&decomp.e_mat);
    if e_norm >= ell {
        failed.push(format!("‖E‖s = {e_norm} >= ell = {ell}"));
    }
    if decomp.sigma_min() < 1.0 - ell {
        failed.push(format!("min Σ = {} < 1 - ell", decomp.sigma_min()));
    }
    if !failed.is_empty() {
        return Err(Error::HypothesisViolated(failed.join("; ")));
    }
    let pinv = min_inf_pinv(a)?;
    let star = min_inf_pinv(a_star)?;
    let n_inf = norm_row_induced(&decomp.n_mat);
    let gamma = pinv.inf_norm * n_inf / (1.0 - 2.0 * ell) + c_nu * pinv.inf_norm;
    let max_xi = xi_values(&pinv.pinv, decomp, samples)?
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let small_noise_holds = (n_inf * star.inf_norm < 0.125).then(|| {
        pinv.inf_norm <= 2.0 * star.inf_norm
            && gamma <= 3.0 * star.inf_norm * (n_inf + c_nu)
    });
    Ok(XiReport {
        gamma,
        pinv_norm: pinv.inf_norm,
        star_pinv_norm: star.inf_norm,
        max_xi,
        holds: max_xi <= gamma,
        small_noise_holds,
    })
}

/// Largest entrywise gap between `A†y` and `(Σ + E)⁻¹x* + ξ` over `samples`.
pub fn decoding_identity_residual(
    pinv: &DenseMatrix,
    decomp: &Decomposition,
    samples: &[Sample],
) -> Result<f64> {
    let z = linalg::inverse(&decomp.coefficients())?;
    let xis = xi_values(pinv, decomp, samples)?;
    let mut worst = 0.0_f64;
    for (s, xi) in samples.iter().zip(&xis) {
        let lhs = pinv.matvec(&s.y);
        let zx = z.matvec(&s.x_star);
        for k in 0..lhs.len() {
            worst = worst.max((lhs[k] - zx[k] - xi[k]).abs());
        }
    }
    Ok(worst)
}
