//! Synthetic worlds: ground-truth features, weight and noise distributions,
//! warm-start initializations and batches of samples `y = A*x* + ν`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::{norm_row_induced, norm_sym, DenseMatrix};
use crate::pinv::ls_pinv;
use crate::rng::Stream;

/// Probability that an entry of a random ground-truth column is nonzero.
const GROUND_TRUTH_DENSITY: f64 = 0.2;
const GROUND_TRUTH_ATTEMPTS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    /// `scale` with probability `p`, else 0.
    ScaledBernoulli { p: f64, scale: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::ScaledBernoulli { p, scale } => p * scale,
            Marginal::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            Marginal::ScaledBernoulli { p, scale } => p * scale * scale,
            Marginal::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_moment() - m * m
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::ScaledBernoulli { p, scale } => {
                if rng.random::<f64>() < p {
                    scale
                } else {
                    0.0
                }
            }
            Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Finite support as `(value, probability)` pairs, if there is one.
    pub fn support(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Marginal::ScaledBernoulli { p, scale } => Some(vec![(0.0, 1.0 - p), (scale, p)]),
            Marginal::Uniform { lo, hi } if lo == hi => Some(vec![(lo, 1.0)]),
            Marginal::Uniform { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::ScaledBernoulli { p, scale } => {
                (0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&scale)
            }
            Marginal::Uniform { lo, hi } => 0.0 <= lo && lo <= hi && hi <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::BadParams(format!("marginal {self:?} is not supported in [0,1]")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightDist {
    /// Each coordinate is 1 with probability `s/n`, else 0.
    BernoulliUniform { s: f64, n: usize },
    IndependentBounded(Vec<Marginal>),
}

impl WeightDist {
    pub fn n(&self) -> usize {
        match self {
            WeightDist::BernoulliUniform { n, .. } => *n,
            WeightDist::IndependentBounded(ms) => ms.len(),
        }
    }

    pub fn marginal(&self, i: usize) -> Marginal {
        match self {
            WeightDist::BernoulliUniform { s, n } => Marginal::ScaledBernoulli {
                p: s / *n as f64,
                scale: 1.0,
            },
            WeightDist::IndependentBounded(ms) => ms[i],
        }
    }

    pub fn marginals(&self) -> Vec<Marginal> {
        (0..self.n()).map(|i| self.marginal(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightDist::BernoulliUniform { s, n } => {
                if *n == 0 || !(0.0..=*n as f64).contains(s) {
                    return Err(Error::BadParams(format!("sparsity s={s} outside [0, {n}]")));
                }
                Ok(())
            }
            WeightDist::IndependentBounded(ms) => {
                if ms.is_empty() {
                    return Err(Error::BadParams("no marginals".into()));
                }
                ms.iter().try_for_each(Marginal::validate)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `n · max_i E[x_i]`.
    pub c1: f64,
    /// `n · min_i E[x_i²]`.
    pub c2: f64,
    /// `n · max_i E[x_i²]`.
    pub c2_upper: f64,
    /// `c1 / c2`.
    pub mu: f64,
}

pub fn moments(dist: &WeightDist) -> Moments {
    if let WeightDist::BernoulliUniform { s, .. } = *dist {
        return Moments {
            c1: s,
            c2: s,
            c2_upper: s,
            mu: if s > 0.0 { 1.0 } else { f64::NAN },
        };
    }
    let n = dist.n() as f64;
    let ms = dist.marginals();
    let max_mean = ms.iter().map(Marginal::mean).fold(0.0, f64::max);
    let min_sq = ms.iter().map(Marginal::second_moment).fold(f64::INFINITY, f64::min);
    let max_sq = ms.iter().map(Marginal::second_moment).fold(0.0, f64::max);
    let c1 = n * max_mean;
    let c2 = n * min_sq;
    Moments {
        c1,
        c2,
        c2_upper: n * max_sq,
        mu: if c2 > 0.0 { c1 / c2 } else { f64::INFINITY },
    }
}

pub fn sample_weights<R: Rng + ?Sized>(dist: &WeightDist, rng: &mut R) -> Vec<f64> {
    match *dist {
        WeightDist::BernoulliUniform { s, n } => {
            let p = s / n as f64;
            (0..n)
                .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                .collect()
        }
        WeightDist::IndependentBounded(ref ms) => ms.iter().map(|m| m.sample(rng)).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversaryStrategy {
    /// `ν_i = C_ν` for every entry.
    ConstantBias,
    /// `ν_i = C_ν · sign(u_i)` with `u = A·1` the sum of the columns of the
    /// current iterate (of `A*` when none is supplied), `sign(0) = +1`.
    SignAligned,
    /// `ν_i = C_ν · U[0,1]`, independent of everything else.
    RandomBounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnbiasedDist {
    Rademacher,
    UniformSym,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    None,
    Adversarial { level: f64, strategy: AdversaryStrategy },
    Unbiased { level: f64, dist: UnbiasedDist },
}

impl NoiseModel {
    pub fn level(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Adversarial { level, .. } | NoiseModel::Unbiased { level, .. } => level,
        }
    }

    /// Whether `ν` is a deterministic function of `(x*, A)`.
    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            NoiseModel::None
                | NoiseModel::Adversarial {
                    strategy: AdversaryStrategy::ConstantBias | AdversaryStrategy::SignAligned,
                    ..
                }
        ) || self.level() == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.level();
        if l.is_finite() && l >= 0.0 {
            Ok(())
        } else {
            Err(Error::BadParams(format!("noise level {l} must be finite and >= 0")))
        }
    }
}

fn sign_aligned(level: f64, a: &DenseMatrix) -> Vec<f64> {
    (0..a.rows())
        .map(|i| a.row(i).iter().sum::<f64>())
        .map(|u| if u < 0.0 { -level } else { level })
        .collect()
}

pub fn sample_noise<R: Rng + ?Sized>(
    model: &NoiseModel,
    _x_star: &[f64],
    a_star: &DenseMatrix,
    a_current: Option<&DenseMatrix>,
    rng: &mut R,
) -> Vec<f64> {
    let m = a_star.rows();
    match *model {
        NoiseModel::None => vec![0.0; m],
        NoiseModel::Adversarial { level, strategy } => match strategy {
            AdversaryStrategy::ConstantBias => vec![level; m],
            AdversaryStrategy::SignAligned => {
                sign_aligned(level, a_current.unwrap_or(a_star))
            }
            AdversaryStrategy::RandomBounded => {
                (0..m).map(|_| level * rng.random::<f64>()).collect()
            }
        },
        NoiseModel::Unbiased { level, dist } => match dist {
            UnbiasedDist::Rademacher => (0..m)
                .map(|_| if rng.random::<bool>() { level } else { -level })
                .collect(),
            UnbiasedDist::UniformSym => (0..m)
                .map(|_| level * (2.0 * rng.random::<f64>() - 1.0))
                .collect(),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ESign {
    Mixed,
    NonNegative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub ell: f64,
    pub e_sign: ESign,
    pub n0_level: f64,
    pub sigma_range: (f64, f64),
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.sigma_range;
        if !(0.0..0.5).contains(&self.ell) {
            return Err(Error::BadParams(format!("ell={} outside [0, 1/2)", self.ell)));
        }
        if !(lo >= 1.0 - self.ell - 1e-15 && lo <= hi && hi.is_finite()) {
            return Err(Error::BadParams(format!(
                "sigma range ({lo}, {hi}) must satisfy 1-ell <= lo <= hi"
            )));
        }
        if !(self.n0_level >= 0.0 && self.n0_level.is_finite()) {
            return Err(Error::BadParams(format!("n0_level={} must be >= 0", self.n0_level)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub ground_truth: DenseMatrix,
    pub weights: WeightDist,
    pub noise: NoiseModel,
    pub init: InitSpec,
}

impl ModelSpec {
    pub fn m(&self) -> usize {
        self.ground_truth.rows()
    }

    pub fn n(&self) -> usize {
        self.ground_truth.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.n() != self.n() {
            return Err(Error::BadDims(format!(
                "weights have {} coordinates, ground truth has {} columns",
                self.weights.n(),
                self.n()
            )));
        }
        self.weights.validate()?;
        self.noise.validate()?;
        self.init.validate()?;
        linalg::ensure_full_column_rank(&self.ground_truth)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub y: Vec<f64>,
    pub x_star: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Draws sample `k` of a stream.
pub fn sample_one(spec: &ModelSpec, a_current: Option<&DenseMatrix>, stream: &Stream, k: u64) -> Sample {
    let mut rng = stream.draw(k);
    let x_star = sample_weights(&spec.weights, &mut rng);
    let nu = sample_noise(&spec.noise, &x_star, &spec.ground_truth, a_current, &mut rng);
    let mut y = spec.ground_truth.matvec(&x_star);
    for (yi, vi) in y.iter_mut().zip(&nu) {
        *yi += vi;
    }
    Sample { y, x_star, nu }
}

/// `count` independent samples; sample `k` depends only on `(stream, k)`.
pub fn sample_batch(
    spec: &ModelSpec,
    count: usize,
    a_current: Option<&DenseMatrix>,
    stream: &Stream,
) -> Result<Vec<Sample>> {
    if count < 2 {
        return Err(Error::BadParams(format!("batch size {count} < 2")));
    }
    Ok((0..count as u64)
        .into_par_iter()
        .map(|k| sample_one(spec, a_current, stream, k))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GroundTruthKind {
    Identity,
    RandomNonnegUnitL1,
    /// Every column is `(1 − corr)·own + corr·shared`.
    Overlapping(f64),
}

fn random_unit_column<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let mut col: Vec<f64> = (0..m)
        .map(|_| {
            if rng.random::<f64>() < GROUND_TRUTH_DENSITY {
                rng.random::<f64>()
            } else {
                0.0
            }
        })
        .collect();
    let forced = rng.random_range(0..m);
    col[forced] = col[forced].max(0.5 + 0.5 * rng.random::<f64>());
    let total: f64 = col.iter().sum();
    col.iter_mut().for_each(|v| *v /= total);
    col
}

pub fn gen_ground_truth(kind: GroundTruthKind, m: usize, n: usize, stream: &Stream) -> Result<DenseMatrix> {
    if n == 0 || m < n {
        return Err(Error::BadDims(format!("ground truth needs m >= n >= 1, got m={m}, n={n}")));
    }
    if kind == GroundTruthKind::Identity {
        return Ok(DenseMatrix::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.0 }));
    }
    let corr = match kind {
        GroundTruthKind::Overlapping(c) if (0.0..1.0).contains(&c) => c,
        GroundTruthKind::Overlapping(c) => {
            return Err(Error::BadParams(format!("overlap {c} outside [0, 1)")))
        }
        _ => 0.0,
    };
    for attempt in 0..GROUND_TRUTH_ATTEMPTS {
        let mut rng = stream.draw(attempt);
        let shared = random_unit_column(m, &mut rng);
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                random_unit_column(m, &mut rng)
                    .iter()
                    .zip(&shared)
                    .map(|(o, s)| (1.0 - corr) * o + corr * s)
                    .collect()
            })
            .collect();
        let a = DenseMatrix::from_columns(&cols)?;
        if linalg::has_full_column_rank(&a) {
            return Ok(a);
        }
    }
    Err(Error::RankDeficient)
}

/// Projects each column of `g` off `col(a_star)`.
fn project_off_span(a_star: &DenseMatrix, g: &DenseMatrix) -> Result<DenseMatrix> {
    let coef = ls_pinv(a_star)?.matmul(g);
    Ok(g.sub(&a_star.matmul(&coef)))
}

/// `A⁽⁰⁾ = A*(Σ + E) + N` with the norms requested by `init`.
pub fn gen_init(a_star: &DenseMatrix, init: &InitSpec, stream: &Stream) -> Result<DenseMatrix> {
    init.validate()?;
    linalg::ensure_full_column_rank(a_star)?;
    let (m, n) = a_star.shape();
    if init.n0_level > 0.0 && m == n {
        return Err(Error::BadDims(format!(
            "square {m}x{n} ground truth leaves no room for an out-of-span component"
        )));
    }
    let mut rng = stream.draw(0);
    let (lo, hi) = init.sigma_range;
    let sigma: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();

    let mut e = DenseMatrix::from_fn(n, n, |i, j| {
        let u: f64 = rng.random();
        match (i == j, init.e_sign) {
            (true, _) => 0.0,
            (false, ESign::Mixed) => 2.0 * u - 1.0,
            (false, ESign::NonNegative) => u,
        }
    });
    let e_norm = norm_sym(&e);
    e = if init.ell > 0.0 && e_norm > 0.0 {
        e.scale(init.ell / e_norm)
    } else {
        DenseMatrix::zeros(n, n)
    };

    let mut b = e;
    for (i, s) in sigma.iter().enumerate() {
        b[(i, i)] = *s;
    }
    let mut a0 = a_star.matmul(&b);

    if init.n0_level > 0.0 {
        let g = DenseMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
        let nmat = project_off_span(a_star, &g)?;
        let norm = norm_row_induced(&nmat);
        if norm == 0.0 {
            return Err(Error::SingularMatrix);
        }
        a0 = a0.add(&nmat.scale(init.n0_level / norm));
    }
    Ok(a0)
}
