//! Equilibration: balance the per-feature second moments `E[x_j²]/D_j²` by
//! growing a working set `S` of columns, updating only those columns, and
//! inflating them by `1/(1 − ε)` after every pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{sample_batch, Marginal, ModelSpec, WeightDist};
use crate::matrix::{pairwise_sum, DenseMatrix};
use crate::purify::{decode_batch, empirical_update, Pairing};
use crate::rng::Stream;

/// Target lower edge of the working-set moments relative to the threshold.
pub const B: f64 = 0.75;
/// Allowed spread of the balanced moments.
pub const KAPPA: f64 = 2.0;
pub const DEFAULT_EPSILON: f64 = 1.0 / 2000.0;
/// Numerator of the per-column ratio `r_j = RATIO_NUM / m_j`.
const RATIO_NUM: f64 = 3.0 / 5.0;

/// How the admission threshold shrinks after each pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdDecay {
    /// `λ ← (1 − ε)²λ`, the rate at which working-set moments shrink.
    #[default]
    Quadratic,
    /// `λ ← (1 − ε)λ`. Working-set moments then fall faster than the
    /// threshold, and columns admitted late end up heavier than early ones
    /// by about the original imbalance.
    Linear,
}

impl ThresholdDecay {
    fn factor(&self, epsilon: f64) -> f64 {
        match self {
            ThresholdDecay::Quadratic => (1.0 - epsilon) * (1.0 - epsilon),
            ThresholdDecay::Linear => 1.0 - epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilParams {
    pub alpha: f64,
    pub eta: f64,
    /// ColumnUpdate iterations per pass.
    pub inner_iterations: usize,
    pub epsilon: f64,
    /// Initial threshold; `None` uses `max_j m_j / B` from a first estimate.
    pub lambda0: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    /// Cap on inner passes; `None` derives one from the first estimate.
    pub max_outer: Option<usize>,
    pub decay: ThresholdDecay,
}

impl EquilParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            bad.push(format!("epsilon={} must lie in (0, 1)", self.epsilon));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            bad.push(format!("eta={} must lie in (0, 1]", self.eta));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            bad.push(format!("alpha={} must be >= 0", self.alpha));
        }
        if self.batch_size < 2 {
            bad.push(format!("batch size {} must be >= 2", self.batch_size));
        }
        if let Some(l) = self.lambda0 {
            if !(l > 0.0 && l.is_finite()) {
                bad.push(format!("lambda0={l} must be > 0"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::BadParams(bad.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilState {
    pub a: DenseMatrix,
    pub in_set: Vec<bool>,
    pub d: Vec<f64>,
    pub lambda: f64,
    pub m_est: Vec<f64>,
    pub passes: usize,
}

impl EquilState {
    pub fn set_size(&self) -> usize {
        self.in_set.iter().filter(|&&b| b).count()
    }

    pub fn members(&self) -> Vec<usize> {
        (0..self.in_set.len()).filter(|&j| self.in_set[j]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassLog {
    pub pass: usize,
    pub set_size: usize,
    pub lambda: f64,
    /// `max_i E[x_i²]/D_i² / min_j E[x_j²]/D_j²` from the true moments.
    pub balance_ratio: f64,
    /// Working-set invariant against the true moments: every member has
    /// `E[x_j²]/D_j² ≥ Bλ` and every column has `E[x_i²]/D_i² ≤ Bκλ`.
    pub invariant_ok: bool,
}

impl PassLog {
    pub const CSV_HEADER: &'static str = "pass,set_size,lambda,balance_ratio,invariant_ok";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.pass, self.set_size, self.lambda, self.balance_ratio, self.invariant_ok as u8
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilOutcome {
    pub a: DenseMatrix,
    pub d: Vec<f64>,
    pub log: Vec<PassLog>,
    pub state: EquilState,
}

/// ColumnUpdate: `T` steps that replace each column `i ∈ S` by
/// `[(1 − η)A + r_i η Ê[(y − y′)(x − x′)ᵀ]]_i`; other columns are untouched.
#[allow(clippy::too_many_arguments)]
pub fn column_update(
    a: &DenseMatrix,
    set: &[usize],
    ratios: &[f64],
    alpha: f64,
    eta: f64,
    iterations: usize,
    batch_size: usize,
    spec: &ModelSpec,
    stream: &Stream,
) -> Result<DenseMatrix> {
    if set.is_empty() || iterations == 0 {
        return Ok(a.clone());
    }
    if ratios.len() != a.cols() {
        return Err(Error::BadDims(format!("{} ratios for {} columns", ratios.len(), a.cols())));
    }
    if let Some(&j) = set.iter().find(|&&j| !(ratios[j] > 0.0 && ratios[j].is_finite())) {
        return Err(Error::BadParams(format!("ratio for column {j} is {}", ratios[j])));
    }
    let mut cur = a.clone();
    for t in 0..iterations as u64 {
        let batch = sample_batch(spec, batch_size, Some(&cur), &stream.index(t))?;
        let ys: Vec<&[f64]> = batch.iter().map(|s| s.y.as_slice()).collect();
        let xs = decode_batch(&cur, &ys, alpha)?;
        let delta = empirical_update(&ys, &xs, Pairing::ClosedFormAllPairs, &stream.index(t))?;
        for &j in set {
            let col: Vec<f64> = (0..cur.rows())
                .map(|i| (1.0 - eta) * cur[(i, j)] + ratios[j] * eta * delta[(i, j)])
                .collect();
            cur.set_col(j, &col);
        }
    }
    Ok(cur)
}

/// Rescale: ColumnUpdate, then multiply every column in `S` by `1/(1 − ε)`.
#[allow(clippy::too_many_arguments)]
pub fn rescale(
    a: &DenseMatrix,
    set: &[usize],
    ratios: &[f64],
    params: &EquilParams,
    spec: &ModelSpec,
    stream: &Stream,
) -> Result<DenseMatrix> {
    let mut out = column_update(
        a,
        set,
        ratios,
        params.alpha,
        params.eta,
        params.inner_iterations,
        params.batch_size,
        spec,
        stream,
    )?;
    let f = 1.0 / (1.0 - params.epsilon);
    for &j in set {
        let col: Vec<f64> = out.col(j).iter().map(|v| v * f).collect();
        out.set_col(j, &col);
    }
    Ok(out)
}

/// Per-coordinate mean of `x_j²` over a fresh batch of decodings.
pub fn estimate_second_moments(
    a: &DenseMatrix,
    spec: &ModelSpec,
    batch_size: usize,
    alpha: f64,
    stream: &Stream,
) -> Result<Vec<f64>> {
    let batch = sample_batch(spec, batch_size, Some(a), stream)?;
    let ys: Vec<&[f64]> = batch.iter().map(|s| s.y.as_slice()).collect();
    let xs = decode_batch(a, &ys, alpha)?;
    Ok((0..a.cols())
        .map(|j| {
            let sq: Vec<f64> = xs.iter().map(|x| x[j] * x[j]).collect();
            pairwise_sum(&sq) / xs.len() as f64
        })
        .collect())
}

/// `E[x_j²]/D_j²` from the model's true marginals.
pub fn scaled_true_moments(weights: &WeightDist, d: &[f64]) -> Vec<f64> {
    weights
        .marginals()
        .iter()
        .zip(d)
        .map(|(m, dj)| m.second_moment() / (dj * dj))
        .collect()
}

pub fn balance_ratio(weights: &WeightDist, d: &[f64]) -> f64 {
    let m = scaled_true_moments(weights, d);
    let hi = m.iter().copied().fold(0.0, f64::max);
    let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

/// Weight distribution of `D⁻¹x*`, the weights seen by a matrix balanced
/// with `D`.
pub fn rescaled_weights(weights: &WeightDist, d: &[f64]) -> WeightDist {
    WeightDist::IndependentBounded(
        weights
            .marginals()
            .iter()
            .zip(d)
            .map(|(m, dj)| match *m {
                Marginal::ScaledBernoulli { p, scale } => Marginal::ScaledBernoulli { p, scale: scale / dj },
                Marginal::Uniform { lo, hi } => Marginal::Uniform { lo: lo / dj, hi: hi / dj },
            })
            .collect(),
    )
}

fn invariant_holds(weights: &WeightDist, state: &EquilState) -> bool {
    let m = scaled_true_moments(weights, &state.d);
    let upper = B * KAPPA * state.lambda;
    m.iter().all(|&v| v <= upper)
        && state
            .in_set
            .iter()
            .zip(&m)
            .all(|(&member, &v)| !member || v >= B * state.lambda)
}

/// Default pass cap: enough passes for the threshold to fall from `λ₀` to
/// `B·min_j m_j / κ`, plus `n`.
pub fn default_max_outer(lambda0: f64, min_moment: f64, epsilon: f64, decay: ThresholdDecay, n: usize) -> usize {
    let needed = (B * min_moment / (KAPPA * lambda0)).ln() / decay.factor(epsilon).ln();
    needed.max(0.0).ceil() as usize + n
}

/// Runs Equilibration from `a0`, calling `on_pass` after every pass.
pub fn equilibration_with(
    a0: &DenseMatrix,
    params: &EquilParams,
    spec: &ModelSpec,
    on_pass: &mut dyn FnMut(&PassLog),
) -> Result<EquilOutcome> {
    params.validate()?;
    let n = a0.cols();
    let root = Stream::new(params.seed).child("equilibrate");
    let estimates = root.child("estimate");
    let updates = root.child("update");

    let m_est = estimate_second_moments(a0, spec, params.batch_size, params.alpha, &estimates.index(0))?;
    let max_m = m_est.iter().copied().fold(0.0, f64::max);
    let min_m = m_est.iter().copied().fold(f64::INFINITY, f64::min);
    let lambda = params.lambda0.unwrap_or(max_m / B);
    if !(lambda > 0.0) {
        return Err(Error::BadParams("every estimated feature moment is zero".into()));
    }
    let max_passes = match params.max_outer {
        Some(k) => k,
        None if min_m > 0.0 => default_max_outer(lambda, min_m, params.epsilon, params.decay, n),
        None => {
            return Err(Error::BadParams(
                "a feature never fires at the initial iterate; set max_outer explicitly".into(),
            ))
        }
    };

    let mut state = EquilState {
        a: a0.clone(),
        in_set: vec![false; n],
        d: vec![1.0; n],
        lambda,
        m_est,
        passes: 0,
    };
    let mut log = Vec::new();
    let mut emit = |state: &EquilState, log: &mut Vec<PassLog>| {
        let entry = PassLog {
            pass: state.passes,
            set_size: state.set_size(),
            lambda: state.lambda,
            balance_ratio: balance_ratio(&spec.weights, &state.d),
            invariant_ok: invariant_holds(&spec.weights, state),
        };
        on_pass(&entry);
        log.push(entry);
    };

    let shrink = (1.0 - params.epsilon) * (1.0 - params.epsilon);
    let outer_estimates = root.child("outer");
    let mut stage = 0u64;
    while state.set_size() < n {
        if stage > 0 {
            let fresh = estimate_second_moments(
                &state.a,
                spec,
                params.batch_size,
                params.alpha,
                &outer_estimates.index(stage),
            )
            .map_err(|e| e.at(state.passes))?;
            for j in 0..n {
                if !state.in_set[j] {
                    state.m_est[j] = fresh[j];
                }
            }
        }
        stage += 1;
        loop {
            let outside_max = (0..n)
                .filter(|&j| !state.in_set[j])
                .map(|j| state.m_est[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if outside_max >= state.lambda {
                break;
            }
            if state.passes >= max_passes {
                return Err(Error::MaxOuterExceeded {
                    passes: state.passes,
                    in_set: state.set_size(),
                    n,
                    state: Box::new(state),
                });
            }
            let members = state.members();
            let ratios: Vec<f64> = state
                .m_est
                .iter()
                .map(|&m| if m > 0.0 { RATIO_NUM / m } else { f64::INFINITY })
                .collect();
            let pass = state.passes as u64;
            state.a = rescale(&state.a, &members, &ratios, params, spec, &updates.index(pass))
                .map_err(|e| e.at(state.passes))?;
            state.lambda *= params.decay.factor(params.epsilon);
            for &j in &members {
                state.d[j] /= 1.0 - params.epsilon;
                state.m_est[j] *= shrink;
            }
            let fresh = estimate_second_moments(
                &state.a,
                spec,
                params.batch_size,
                params.alpha,
                &estimates.index(pass + 1),
            )
            .map_err(|e| e.at(state.passes))?;
            for j in 0..n {
                if !state.in_set[j] {
                    state.m_est[j] = fresh[j];
                }
            }
            state.passes += 1;
            emit(&state, &mut log);
        }
        for j in 0..n {
            if state.m_est[j] >= state.lambda {
                state.in_set[j] = true;
            }
        }
        emit(&state, &mut log);
    }
    Ok(EquilOutcome {
        a: state.a.clone(),
        d: state.d.clone(),
        log,
        state,
    })
}

pub fn equilibration(a0: &DenseMatrix, params: &EquilParams, spec: &ModelSpec) -> Result<EquilOutcome> {
    equilibration_with(a0, params, spec, &mut |_| {})
}
