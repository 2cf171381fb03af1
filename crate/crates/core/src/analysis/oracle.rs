//! Exact population expectations by enumerating finite weight supports.

use serde::{Deserialize, Serialize};

use super::{decompose, xi_values, BoundCheck};
use crate::error::{Error, Result};
use crate::genmodel::{moments, sample_noise, ModelSpec, Sample};
use crate::linalg;
use crate::matrix::{relu_offset, DenseMatrix};
use crate::pinv::min_inf_pinv;

pub const MAX_ORACLE_DIM: usize = 12;
pub const MAX_ORACLE_OUTCOMES: usize = 4096;
/// Round-off allowance for inequalities evaluated on enumerated expectations.
const XI_ROUNDOFF: f64 = 1e-12;

/// Population moments of one decode pass, exact over the weight support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactExpectation {
    /// `E[(y − y′)(x − x′)ᵀ]`, m×n.
    pub update: DenseMatrix,
    /// `E[(x* − x*′)(x − x′)ᵀ]`, n×n.
    pub coefficients: DenseMatrix,
    /// `E[x]` for the decoded weights.
    pub mean_decoded: Vec<f64>,
    /// Largest `|ξ_i|` over the support.
    pub max_abs_xi: f64,
    pub outcomes: usize,
}

/// Every weight vector in the support with its probability, in a fixed
/// lexicographic order.
pub fn enumerate_weights(spec: &ModelSpec) -> Result<Vec<(Vec<f64>, f64)>> {
    let n = spec.n();
    if n > MAX_ORACLE_DIM {
        return Err(Error::SupportTooLarge(format!("n = {n} > {MAX_ORACLE_DIM}")));
    }
    let mut supports = Vec::with_capacity(n);
    for (i, m) in spec.weights.marginals().iter().enumerate() {
        match m.support() {
            Some(s) if s.len() <= 2 => supports.push(s),
            _ => {
                return Err(Error::SupportTooLarge(format!(
                    "coordinate {i} has no support of size <= 2"
                )))
            }
        }
    }
    let total: usize = supports.iter().map(Vec::len).product();
    if total > MAX_ORACLE_OUTCOMES {
        return Err(Error::SupportTooLarge(format!("{total} outcomes")));
    }
    let mut out = vec![(Vec::with_capacity(n), 1.0)];
    for s in &supports {
        out = out
            .into_iter()
            .flat_map(|(x, p)| {
                s.iter().map(move |&(v, q)| {
                    let mut x = x.clone();
                    x.push(v);
                    (x, p * q)
                })
            })
            .collect();
    }
    Ok(out)
}

/// Exact update statistics when decoding through `a` with offset `alpha`.
///
/// The noise must be a deterministic function of the weights and the iterate
/// (none, constant bias, or sign-aligned); random noise has no finite
/// support to enumerate.
pub fn exact_expectations(spec: &ModelSpec, a: &DenseMatrix, alpha: f64) -> Result<ExactExpectation> {
    if !spec.noise.is_deterministic() {
        return Err(Error::SupportTooLarge("noise is random".into()));
    }
    let outcomes = enumerate_weights(spec)?;
    let pinv = min_inf_pinv(a)?.pinv;
    let (m, n) = spec.ground_truth.shape();
    let mut rng = crate::rng::Stream::new(0).draw(0);
    let mut samples = Vec::with_capacity(outcomes.len());
    let mut probs = Vec::with_capacity(outcomes.len());
    for (x_star, p) in outcomes {
        let nu = sample_noise(&spec.noise, &x_star, &spec.ground_truth, Some(a), &mut rng);
        let mut y = spec.ground_truth.matvec(&x_star);
        y.iter_mut().zip(&nu).for_each(|(yi, vi)| *yi += vi);
        samples.push(Sample { y, x_star, nu });
        probs.push(p);
    }

    let mut e_y = vec![0.0; m];
    let mut e_xs = vec![0.0; n];
    let mut e_x = vec![0.0; n];
    let mut e_yx = DenseMatrix::zeros(m, n);
    let mut e_xsx = DenseMatrix::zeros(n, n);
    for (s, &p) in samples.iter().zip(&probs) {
        let x = relu_offset(&pinv.matvec(&s.y), alpha);
        for j in 0..n {
            e_x[j] += p * x[j];
            e_xs[j] += p * s.x_star[j];
        }
        for i in 0..m {
            e_y[i] += p * s.y[i];
            for j in 0..n {
                e_yx[(i, j)] += p * s.y[i] * x[j];
            }
        }
        for i in 0..n {
            for j in 0..n {
                e_xsx[(i, j)] += p * s.x_star[i] * x[j];
            }
        }
    }
    let update = DenseMatrix::from_fn(m, n, |i, j| 2.0 * (e_yx[(i, j)] - e_y[i] * e_x[j]));
    let coefficients = DenseMatrix::from_fn(n, n, |i, j| 2.0 * (e_xsx[(i, j)] - e_xs[i] * e_x[j]));

    let d = decompose(a, &spec.ground_truth)?;
    let max_abs_xi = xi_values(&pinv, &d, &samples)?
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(ExactExpectation {
        update,
        coefficients,
        mean_decoded: e_x,
        max_abs_xi,
        outcomes: samples.len(),
    })
}

/// `E[(y − y′)(x − x′)ᵀ]` with `y, y′` independent draws from the model and
/// `x, x′` their decodings through `a`.
pub fn exact_update_expectation(spec: &ModelSpec, a: &DenseMatrix, alpha: f64) -> Result<DenseMatrix> {
    Ok(exact_expectations(spec, a, alpha)?.update)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EBoundEntry {
    /// Row of the contaminated coefficient `Ẽ_{j,i}`.
    pub j: usize,
    pub i: usize,
    pub z_ij: f64,
    pub e_tilde: f64,
    /// Case 1 (`Z_ij < 0`): `|Ẽ_ji|` against its bound. Case 2: `Ẽ_ji`
    /// against the upper bound.
    pub upper: BoundCheck,
    /// Case 2 only: `−Ẽ_ji` against the negated lower bound.
    pub lower: Option<BoundCheck>,
}

impl EBoundEntry {
    pub fn holds(&self) -> bool {
        self.upper.holds && self.lower.is_none_or(|c| c.holds)
    }

    pub fn slack(&self) -> f64 {
        self.lower.map_or(self.upper.slack, |l| l.slack.min(self.upper.slack))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EBoundAudit {
    pub entries: Vec<EBoundEntry>,
    pub max_abs_xi: f64,
}

impl EBoundAudit {
    pub fn holds(&self) -> bool {
        self.entries.iter().all(EBoundEntry::holds)
    }

    pub fn worst_slack(&self) -> f64 {
        self.entries.iter().map(EBoundEntry::slack).fold(f64::INFINITY, f64::min)
    }
}

/// Audits the entrywise bounds on the off-diagonal update coefficients
/// `Ẽ_{j,i} = E[(x*_j − x*′_j)(x_i − x′_i)]` given `|ξ_i| ≤ ρ < α`.
///
/// With `Z = (Σ + E)⁻¹`, `Z^i` its i-th row and `C₁ = n·max E[x*_k]`:
/// * if `Z_ij < 0`: `|Ẽ_ji| ≤ 4C₁²‖Z^i‖₁/(n²(α−ρ)) · (|Z_ij| + ρ)`;
/// * if `Z_ij ≥ 0`: `Ẽ_ji` lies between
///   `−8C₁ρ/(n(α−ρ))·(C₁‖Z^i‖₁/n + Z_ij) − 2C₁²/n²·Z_ij` and
///   `8C₁ρ/(n(α−ρ))·(C₁‖Z^i‖₁/n + Z_ij) + 2E[x_j²]·Z_ij`.
pub fn audit_e_bound_lemma(
    spec: &ModelSpec,
    a: &DenseMatrix,
    alpha: f64,
    rho: f64,
) -> Result<EBoundAudit> {
    if !(rho >= 0.0 && rho < alpha) {
        return Err(Error::HypothesisViolated(format!("need 0 <= rho < alpha, got rho={rho}, alpha={alpha}")));
    }
    let ex = exact_expectations(spec, a, alpha)?;
    if ex.max_abs_xi > rho + XI_ROUNDOFF {
        return Err(Error::HypothesisViolated(format!(
            "max |xi| = {} exceeds rho = {rho}",
            ex.max_abs_xi
        )));
    }
    let d = decompose(a, &spec.ground_truth)?;
    let z = linalg::inverse(&d.coefficients())?;
    let n = spec.n();
    let nf = n as f64;
    let c1 = moments(&spec.weights).c1;
    let second: Vec<f64> = spec.weights.marginals().iter().map(|m| m.second_moment()).collect();
    let gap = alpha - rho;
    let mut entries = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        let zi_l1: f64 = z.row(i).iter().map(|v| v.abs()).sum();
        for j in 0..n {
            if i == j {
                continue;
            }
            let zij = z[(i, j)];
            let et = ex.coefficients[(j, i)];
            let entry = if zij < 0.0 {
                let bound = 4.0 * c1 * c1 * zi_l1 / (nf * nf * gap) * (zij.abs() + rho);
                EBoundEntry {
                    j,
                    i,
                    z_ij: zij,
                    e_tilde: et,
                    upper: BoundCheck::with_tolerance(et.abs(), bound, XI_ROUNDOFF),
                    lower: None,
                }
            } else {
                let common = 8.0 * c1 * rho / (nf * gap) * (c1 * zi_l1 / nf + zij);
                let lower = -common - 2.0 * c1 * c1 / (nf * nf) * zij;
                let upper = common + 2.0 * second[j] * zij;
                EBoundEntry {
                    j,
                    i,
                    z_ij: zij,
                    e_tilde: et,
                    upper: BoundCheck::with_tolerance(et, upper, XI_ROUNDOFF),
                    lower: Some(BoundCheck::with_tolerance(-et, -lower, XI_ROUNDOFF)),
                }
            };
            entries.push(entry);
        }
    }
    Ok(EBoundAudit {
        entries,
        max_abs_xi: ex.max_abs_xi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{ESign, InitSpec, Marginal, NoiseModel, WeightDist};

    fn spec(weights: WeightDist, a_star: DenseMatrix) -> ModelSpec {
        ModelSpec {
            ground_truth: a_star,
            weights,
            noise: NoiseModel::None,
            init: InitSpec {
                ell: 0.0,
                e_sign: ESign::Mixed,
                n0_level: 0.0,
                sigma_range: (1.0, 1.0),
            },
        }
    }

    #[test]
    fn single_bernoulli() {
        let p = 0.3;
        let s = spec(
            WeightDist::IndependentBounded(vec![Marginal::ScaledBernoulli { p, scale: 1.0 }]),
            DenseMatrix::identity(1),
        );
        let e = exact_update_expectation(&s, &DenseMatrix::identity(1), 0.0).unwrap();
        assert!((e[(0, 0)] - 2.0 * p * (1.0 - p)).abs() < 1e-15);
    }

    #[test]
    fn two_fair_coins() {
        let s = spec(WeightDist::BernoulliUniform { s: 1.0, n: 2 }, DenseMatrix::identity(2));
        let e = exact_update_expectation(&s, &DenseMatrix::identity(2), 0.0).unwrap();
        assert_eq!(e, DenseMatrix::from_diag(&[0.5, 0.5]));
    }

    #[test]
    fn continuous_marginals_are_rejected() {
        let s = spec(
            WeightDist::IndependentBounded(vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }]),
            DenseMatrix::identity(1),
        );
        assert!(matches!(
            exact_update_expectation(&s, &DenseMatrix::identity(1), 0.0),
            Err(Error::SupportTooLarge(_))
        ));
        let big = spec(WeightDist::BernoulliUniform { s: 1.0, n: 13 }, DenseMatrix::identity(13));
        assert!(matches!(enumerate_weights(&big), Err(Error::SupportTooLarge(_))));
    }

    #[test]
    fn e_bound_trivial_case() {
        let s = spec(WeightDist::BernoulliUniform { s: 1.0, n: 3 }, DenseMatrix::identity(3));
        let audit = audit_e_bound_lemma(&s, &DenseMatrix::identity(3), 0.05, 0.0).unwrap();
        assert!(audit.holds());
        assert!(audit.entries.iter().all(|e| e.e_tilde.abs() < 1e-15));
    }
}
