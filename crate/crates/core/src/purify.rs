//! Purification: decode every sample through the min-∞-norm left inverse of
//! the current iterate, threshold with `φ_α`, and move the iterate toward the
//! scaled covariance between samples and decodings.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::IterRecord;
use crate::error::{Error, Result};
use crate::genmodel::{sample_batch, Moments, ModelSpec, Sample};
use crate::matrix::{col_normalize, pairwise_sum, relu_offset, DenseMatrix};
use crate::pinv::min_inf_pinv;
use crate::rng::Stream;

/// Samples per block in the outer-product reduction. Blocks are summed in a
/// fixed order, so the result does not depend on the thread count.
const REDUCTION_BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pairing {
    /// `2(mean yxᵀ − ȳx̄ᵀ)`, the exact average over all ordered pairs.
    #[default]
    ClosedFormAllPairs,
    /// Average over this many ordered pairs drawn uniformly with replacement.
    RandomPairs(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub alpha: f64,
    pub eta: f64,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoParams {
    pub alpha: f64,
    pub eta: f64,
    pub r: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub pairing: Pairing,
}

impl AlgoParams {
    pub fn steps(&self) -> StepSizes {
        StepSizes {
            alpha: self.alpha,
            eta: self.eta,
            r: self.r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            bad.push(format!("alpha={} must be >= 0", self.alpha));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            bad.push(format!("eta={} must lie in (0, 1]", self.eta));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            bad.push(format!("r={} must be > 0", self.r));
        }
        if self.batch_size < 2 {
            bad.push(format!("batch size {} must be >= 2", self.batch_size));
        }
        if self.pairing == Pairing::RandomPairs(0) {
            bad.push("random pairing needs at least one pair".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::BadParams(bad.join("; ")))
        }
    }
}

/// `α = c₂/(80·C₁)`, `r = n/c₂`, `η = ℓ/6`.
pub fn default_params(moments: &Moments, ell: f64, n: usize) -> Result<StepSizes> {
    if !(moments.c1 > 0.0 && moments.c2 > 0.0) {
        return Err(Error::BadParams(format!(
            "default parameters need positive moments, got C1={}, c2={}",
            moments.c1, moments.c2
        )));
    }
    if !(ell > 0.0 && ell < 0.5) {
        return Err(Error::BadParams(format!("ell={ell} outside (0, 1/2)")));
    }
    Ok(StepSizes {
        alpha: moments.c2 / (80.0 * moments.c1),
        r: n as f64 / moments.c2,
        eta: ell / 6.0,
    })
}

/// `φ_α(P·y)` for each `y`, with `P` a precomputed left inverse.
pub fn decode_with_pinv(pinv: &DenseMatrix, ys: &[&[f64]], alpha: f64) -> Vec<Vec<f64>> {
    ys.par_iter()
        .map(|y| relu_offset(&pinv.matvec(y), alpha))
        .collect()
}

/// `φ_α(A†y)` for each `y`, with `A†` the min-∞-norm left inverse of `a`.
pub fn decode_batch(a: &DenseMatrix, ys: &[&[f64]], alpha: f64) -> Result<Vec<Vec<f64>>> {
    let pinv = min_inf_pinv(a)?.pinv;
    Ok(decode_with_pinv(&pinv, ys, alpha))
}

fn check_batch(ys: &[&[f64]], xs: &[Vec<f64>]) -> Result<(usize, usize)> {
    if ys.len() != xs.len() || ys.len() < 2 {
        return Err(Error::BadDims(format!(
            "{} samples and {} decodings (need equal counts >= 2)",
            ys.len(),
            xs.len()
        )));
    }
    let (m, n) = (ys[0].len(), xs[0].len());
    if ys.iter().any(|y| y.len() != m) || xs.iter().any(|x| x.len() != n) {
        return Err(Error::BadDims("ragged batch".into()));
    }
    Ok((m, n))
}

/// Blockwise sum of outer products `Σ_k u_k v_kᵀ`, combined in block order.
fn sum_outer(m: usize, n: usize, count: usize, pair: impl Fn(usize) -> (Vec<f64>, Vec<f64>) + Sync) -> Vec<f64> {
    let blocks: Vec<Vec<f64>> = (0..count.div_ceil(REDUCTION_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; m * n];
            for k in b * REDUCTION_BLOCK..((b + 1) * REDUCTION_BLOCK).min(count) {
                let (u, v) = pair(k);
                for (i, ui) in u.iter().enumerate() {
                    if *ui == 0.0 {
                        continue;
                    }
                    let row = &mut acc[i * n..(i + 1) * n];
                    for (r, vj) in row.iter_mut().zip(&v) {
                        *r += ui * vj;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; m * n];
    let mut column = Vec::with_capacity(blocks.len());
    for (idx, t) in total.iter_mut().enumerate() {
        column.clear();
        column.extend(blocks.iter().map(|b| b[idx]));
        *t = pairwise_sum(&column);
    }
    total
}

/// Empirical `Ê[(y − y′)(x − x′)ᵀ]` over a batch.
///
/// The closed form is evaluated as `(2/N) Σ_k (y_k − ȳ)(x_k − x̄)ᵀ` after
/// shifting every sample by the first one, which keeps the cancellation
/// small and makes a batch of identical samples produce exact zeros.
pub fn empirical_update(
    ys: &[&[f64]],
    xs: &[Vec<f64>],
    pairing: Pairing,
    stream: &Stream,
) -> Result<DenseMatrix> {
    let (m, n) = check_batch(ys, xs)?;
    let count = ys.len();
    match pairing {
        Pairing::ClosedFormAllPairs => {
            let (y0, x0) = (ys[0], &xs[0]);
            let mean = |len: usize, get: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
                (0..len)
                    .map(|i| {
                        let v: Vec<f64> = (0..count).map(|k| get(k, i)).collect();
                        pairwise_sum(&v) / count as f64
                    })
                    .collect()
            };
            let ybar = mean(m, &|k, i| ys[k][i] - y0[i]);
            let xbar = mean(n, &|k, j| xs[k][j] - x0[j]);
            let sum = sum_outer(m, n, count, |k| {
                let u = (0..m).map(|i| (ys[k][i] - y0[i]) - ybar[i]).collect();
                let v = (0..n).map(|j| (xs[k][j] - x0[j]) - xbar[j]).collect();
                (u, v)
            });
            let scale = 2.0 / count as f64;
            DenseMatrix::new(m, n, sum.into_iter().map(|v| v * scale).collect())
        }
        Pairing::RandomPairs(pairs) => {
            if pairs == 0 {
                return Err(Error::BadParams("random pairing needs at least one pair".into()));
            }
            let sum = sum_outer(m, n, pairs, |p| {
                let mut rng = stream.draw(p as u64);
                let k = rng.random_range(0..count);
                let l = rng.random_range(0..count);
                let u = (0..m).map(|i| ys[k][i] - ys[l][i]).collect();
                let v = (0..n).map(|j| xs[k][j] - xs[l][j]).collect();
                (u, v)
            });
            let scale = 1.0 / pairs as f64;
            DenseMatrix::new(m, n, sum.into_iter().map(|v| v * scale).collect())
        }
    }
}

/// `(1 − η)A + rη·Δ`.
pub fn apply_update(a: &DenseMatrix, delta: &DenseMatrix, eta: f64, r: f64) -> DenseMatrix {
    a.zip_map(delta, |x, d| (1.0 - eta) * x + r * eta * d)
}

/// One Purification step on a batch.
pub fn purify_step(
    a: &DenseMatrix,
    batch: &[Sample],
    steps: &StepSizes,
    pairing: Pairing,
    stream: &Stream,
) -> Result<DenseMatrix> {
    let ys: Vec<&[f64]> = batch.iter().map(|s| s.y.as_slice()).collect();
    let xs = decode_batch(a, &ys, steps.alpha)?;
    let delta = empirical_update(&ys, &xs, pairing, stream)?;
    Ok(apply_update(a, &delta, steps.eta, steps.r))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurifyResult {
    pub a_final: DenseMatrix,
    pub a_normalized: DenseMatrix,
    /// Records for `t = 0..=T`; empty without diagnostics.
    pub trajectory: Vec<IterRecord>,
}

pub(crate) fn batch_stream(seed: u64) -> Stream {
    Stream::new(seed).child("purify")
}

/// Runs `params.iterations` Purification steps from `a0`.
///
/// With diagnostics on, `observer` sees each record as soon as it is
/// computed, so a caller can persist a partial trajectory before an error.
pub fn run_purification_with(
    spec: &ModelSpec,
    a0: &DenseMatrix,
    params: &AlgoParams,
    with_diagnostics: bool,
    observer: &mut dyn FnMut(&IterRecord),
) -> Result<PurifyResult> {
    params.validate()?;
    if a0.shape() != spec.ground_truth.shape() {
        return Err(Error::BadDims(format!(
            "initial iterate is {:?}, model is {:?}",
            a0.shape(),
            spec.ground_truth.shape()
        )));
    }
    let root = batch_stream(params.seed);
    let samples = root.child("samples");
    let pairs = root.child("pairs");
    let steps = params.steps();
    let mut trajectory = Vec::new();
    let mut a = a0.clone();
    let mut record = |t: usize, a: &DenseMatrix, trajectory: &mut Vec<IterRecord>| -> Result<()> {
        if with_diagnostics {
            let rec = IterRecord::measure(t, a, &spec.ground_truth).map_err(|e| e.at(t))?;
            observer(&rec);
            trajectory.push(rec);
        }
        Ok(())
    };
    record(0, &a, &mut trajectory)?;
    for t in 0..params.iterations {
        let batch = sample_batch(spec, params.batch_size, Some(&a), &samples.index(t as u64))
            .map_err(|e| e.at(t))?;
        a = purify_step(&a, &batch, &steps, params.pairing, &pairs.index(t as u64))
            .map_err(|e| e.at(t))?;
        record(t + 1, &a, &mut trajectory)?;
    }
    let a_normalized = col_normalize(&a).map_err(|e| e.at(params.iterations))?;
    Ok(PurifyResult {
        a_final: a,
        a_normalized,
        trajectory,
    })
}

pub fn run_purification(
    spec: &ModelSpec,
    a0: &DenseMatrix,
    params: &AlgoParams,
    with_diagnostics: bool,
) -> Result<PurifyResult> {
    run_purification_with(spec, a0, params, with_diagnostics, &mut |_| {})
}
