//! Randomized audits run by `purify verify`.
//!
//! Draw `k` of a suite uses the stream `seed / suite / k`, so reports do not
//! depend on the thread count.

use purify_core::analysis::{
    check_v_bounds, decompose, decoding_identity_residual, exact_expectations, audit_e_bound_lemma,
    solve_coupling, solve_simple_coupling, solve_simple_recursion, RecurrenceParams,
};
use purify_core::genmodel::{
    gen_ground_truth, gen_init, sample_batch, ESign, GroundTruthKind, InitSpec, ModelSpec, NoiseModel,
    UnbiasedDist, WeightDist,
};
use purify_core::matrix::{norm_col_induced, norm_row_induced, norm_sym};
use purify_core::pinv::{ls_pinv_inf_norm, min_inf_pinv, min_l1_row};
use purify_core::rng::Stream;
use purify_core::{linalg, DenseMatrix, Error};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::{load_raw, write_json, Globals};
use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct Audit {
    pub name: String,
    pub draws: usize,
    pub failures: usize,
    pub worst_slack: f64,
}

/// One draw's outcome: `Some(slack)` where `slack < 0` is a failure, or
/// `None` when the draw could not establish the audit's hypotheses.
type Draw = Option<f64>;

fn audit(name: &str, stream: &Stream, draws: usize, f: impl Fn(&mut ChaCha8Rng) -> Draw + Sync) -> Audit {
    let s = stream.child(name);
    let slacks: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .filter_map(|k| f(&mut s.draw(k)))
        .collect();
    Audit {
        name: name.to_string(),
        draws: slacks.len(),
        failures: slacks.iter().filter(|v| !(**v >= 0.0)).count(),
        worst_slack: slacks.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn full_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    loop {
        let a = random_matrix(rng, rows, cols);
        if linalg::has_full_column_rank(&a) {
            return a;
        }
    }
}

fn norms(s: &Stream, draws: usize) -> Vec<Audit> {
    const TOL: f64 = 1e-12;
    vec![
        audit("norm_submultiplicative", s, draws, |rng| {
            let (r, k, c) = (rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..7));
            let (a, b) = (random_matrix(rng, r, k), random_matrix(rng, k, c));
            let ab = a.matmul(&b);
            let slack = [norm_col_induced, norm_row_induced, norm_sym]
                .iter()
                .map(|nf| nf(&a) * nf(&b) - nf(&ab))
                .fold(f64::INFINITY, f64::min);
            Some(slack + TOL)
        }),
        audit("norm_transpose_duality", s, draws, |rng| {
            let (r, c) = (rng.random_range(1..7), rng.random_range(1..7));
            let a = random_matrix(rng, r, c);
            Some(-(norm_col_induced(&a) - norm_row_induced(&a.transpose())).abs())
        }),
        audit("norm_vector_gain", s, draws, |rng| {
            let r = rng.random_range(1..7);
            let a = random_matrix(rng, r, 4);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ax = a.matvec(&x);
            let l1 = |v: &[f64]| v.iter().map(|t| t.abs()).sum::<f64>();
            let linf = |v: &[f64]| v.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
            let s1 = norm_col_induced(&a) * l1(&x) - l1(&ax);
            let s2 = norm_row_induced(&a) * linf(&x) - linf(&ax);
            Some(s1.min(s2) + TOL)
        }),
    ]
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if m < k {
        return vec![];
    }
    let mut out = subsets(m - 1, k);
    for mut s in subsets(m - 1, k - 1) {
        s.push(m - 1);
        out.push(s);
    }
    out
}

/// Smallest `‖z‖₁` with `zᵀA = e_iᵀ`, over the vertices of the feasible set.
fn vertex_oracle(a: &DenseMatrix, i: usize) -> f64 {
    let (m, n) = a.shape();
    subsets(m, n)
        .iter()
        .filter_map(|s| linalg::inverse(&DenseMatrix::from_fn(n, n, |r, c| a[(s[r], c)])).ok())
        .map(|inv| inv.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min)
}

fn inverse_residual(p: &DenseMatrix, a: &DenseMatrix) -> f64 {
    let prod = p.matmul(a);
    let n = a.cols();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((prod[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

fn pinv(s: &Stream, draws: usize) -> Vec<Audit> {
    vec![
        audit("pinv_inverse_identity", s, draws, |rng| {
            let a = full_rank(rng, 8, 4);
            let Ok(p) = min_inf_pinv(&a) else { return Some(f64::NEG_INFINITY) };
            Some(1e-8 - inverse_residual(&p.pinv, &a))
        }),
        audit("pinv_minimality", s, draws, |rng| {
            let a = full_rank(rng, 8, 4);
            let (Ok(p), Ok(ls)) = (min_inf_pinv(&a), ls_pinv_inf_norm(&a)) else { return Some(f64::NEG_INFINITY) };
            Some(ls + 1e-8 - p.inf_norm)
        }),
        audit("pinv_vertex_oracle", s, draws, |rng| {
            let a = full_rank(rng, 5, 2);
            let mut slack = f64::INFINITY;
            for i in 0..2 {
                let Ok(z) = min_l1_row(&a, i) else { return Some(f64::NEG_INFINITY) };
                let l1: f64 = z.iter().map(|v| v.abs()).sum();
                slack = slack.min(1e-6 - (l1 - vertex_oracle(&a, i)).abs());
            }
            Some(slack)
        }),
    ]
}

fn off_diagonal(rng: &mut ChaCha8Rng, n: usize, target: f64) -> DenseMatrix {
    let raw = DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random_range(-1.0..1.0) });
    let norm = norm_sym(&raw);
    if norm == 0.0 {
        raw
    } else {
        raw.scale(target / norm)
    }
}

fn small_model(rng: &mut ChaCha8Rng, n: usize, m: usize, noise: NoiseModel) -> Option<(ModelSpec, DenseMatrix)> {
    let s = Stream::new(rng.random());
    let a_star = gen_ground_truth(GroundTruthKind::RandomNonnegUnitL1, m, n, &s.child("ground_truth")).ok()?;
    let init = InitSpec { ell: 0.05, e_sign: ESign::Mixed, n0_level: 0.002, sigma_range: (0.95, 1.05) };
    let a0 = gen_init(&a_star, &init, &s.child("init")).ok()?;
    let spec = ModelSpec { ground_truth: a_star, weights: WeightDist::BernoulliUniform { s: 1.0, n }, noise, init };
    Some((spec, a0))
}

fn lemmas(s: &Stream, draws: usize) -> Vec<Audit> {
    vec![
        audit("v_bounds", s, draws, |rng| {
            let (ell, ell_e) = (0.1, 0.1);
            let n = rng.random_range(2..9);
            let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(1.0 - ell..1.5)).collect();
            let target = rng.random_range(0.0..0.999) * ell_e;
            let e = off_diagonal(rng, n, target);
            check_v_bounds(&sigma, &e, ell, ell_e).ok().map(|r| r.worst_slack())
        }),
        audit("e_bound", s, draws, |rng| {
            let alpha = 0.05;
            let (spec, a0) = small_model(rng, 3, 8, NoiseModel::None)?;
            let xi = exact_expectations(&spec, &a0, alpha).ok()?.max_abs_xi;
            match audit_e_bound_lemma(&spec, &a0, alpha, xi) {
                Ok(a) => Some(a.worst_slack()),
                Err(Error::HypothesisViolated(_)) => None,
                Err(_) => Some(f64::NEG_INFINITY),
            }
        }),
        audit("decoding_identity", s, draws, |rng| {
            let noise = NoiseModel::Unbiased { level: 0.01, dist: UnbiasedDist::UniformSym };
            let (spec, a0) = small_model(rng, 6, 20, noise)?;
            let samples = sample_batch(&spec, 20, Some(&a0), &Stream::new(rng.random())).ok()?;
            let residual = min_inf_pinv(&a0).and_then(|p| {
                let d = decompose(&a0, &spec.ground_truth)?;
                decoding_identity_residual(&p.pinv, &d, &samples)
            });
            Some(residual.map_or(f64::NEG_INFINITY, |r| 1e-9 - r))
        }),
    ]
}

fn recurrence_params(rng: &mut ChaCha8Rng) -> RecurrenceParams {
    let r = rng.random_range(0.05..2.0);
    RecurrenceParams {
        a0: rng.random_range(0.0..1.0),
        b0: rng.random_range(0.0..1.0),
        eta: rng.random_range(0.001..0.5),
        r,
        big_r: r * rng.random_range(4.05..50.0),
        h: rng.random_range(0.0..0.05),
        ..Default::default()
    }
}

fn recurrences(s: &Stream, draws: usize) -> Vec<Audit> {
    vec![
        audit("coupling_closed_form", s, draws, |rng| {
            let p = recurrence_params(rng);
            let t_max = 1000;
            let Ok(sol) = solve_coupling(&p, t_max) else { return Some(f64::NEG_INFINITY) };
            let (a_seq, b_seq) = (sol.a_seq(), sol.b_seq());
            let (mut a, mut b, mut worst) = (p.a0, p.b0, 0.0_f64);
            for t in 0..=t_max {
                worst = worst.max((a - a_seq[t]).abs()).max((b - b_seq[t]).abs());
                (a, b) = (
                    (1.0 - p.eta) * a + p.eta * p.r * b + p.eta * p.h,
                    (1.0 - p.eta) * b + p.eta / p.big_r * a + p.eta * p.h,
                );
            }
            Some(1e-12 - worst)
        }),
        audit("simple_recursion_dominates", s, draws, |rng| {
            let (a0, eta, h) = (rng.random_range(0.0..2.0), rng.random_range(0.001..1.0), rng.random_range(0.0..0.5));
            let bound = solve_simple_recursion(a0, eta, h, 300);
            let (mut a, mut slack) = (a0, f64::INFINITY);
            for b in &bound {
                slack = slack.min(b + 1e-12 - a);
                a = ((1.0 - eta) * a + eta * h) * rng.random_range(0.0..=1.0);
            }
            Some(slack)
        }),
        audit("simple_coupling_dominates", s, draws, |rng| {
            let (a0, b0) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let eta = rng.random_range(0.01..1.0);
            let sc = rng.random_range(0.0..0.9);
            let (h1, h2) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
            let (ua, ub) = solve_simple_coupling(a0, b0, eta, sc, h1, h2);
            let (mut a, mut b, mut slack) = (a0, b0, f64::INFINITY);
            for _ in 0..500 {
                slack = slack.min(ua + 1e-12 - a).min(ub + 1e-12 - b);
                let na = (1.0 - eta) * a + eta * h1;
                let nb = (1.0 - eta) * b + eta * sc * a + eta * h2;
                a = na * rng.random_range(0.5..=1.0);
                b = nb * rng.random_range(0.5..=1.0);
            }
            Some(slack)
        }),
    ]
}

pub fn run_suite(suite: &str, seed: u64, draws: usize) -> Result<Vec<Audit>, CliError> {
    let root = Stream::new(seed).child("verify");
    let one = |name: &str| -> Result<Vec<Audit>, CliError> {
        let s = root.child(name);
        Ok(match name {
            "norms" => norms(&s, draws),
            "pinv" => pinv(&s, draws),
            "lemmas" => lemmas(&s, draws),
            "recurrences" => recurrences(&s, draws),
            other => {
                return Err(CliError::Config(format!(
                    "unknown suite {other:?}; expected norms, pinv, lemmas, recurrences or all"
                )))
            }
        })
    };
    if draws == 0 {
        one(if suite == "all" { "norms" } else { suite })?;
        return Ok(Vec::new());
    }
    if suite == "all" {
        let mut out = Vec::new();
        for name in ["norms", "pinv", "lemmas", "recurrences"] {
            out.extend(one(name)?);
        }
        Ok(out)
    } else {
        one(suite)
    }
}

pub fn cmd_verify(g: &Globals, suite: &str, draws: usize) -> Result<(), CliError> {
    let raw = load_raw(g)?;
    let seed: u64 = raw
        .get("seed")
        .ok_or_else(|| CliError::Config("verify needs --seed or a config with `seed`".into()))?
        .parse()
        .map_err(|_| CliError::Config(format!("`seed`: cannot parse {:?}", raw["seed"])))?;
    let report = run_suite(suite, seed, draws)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.into()))?);
    if let Some(dir) = &g.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("verify.json"), &report)?;
    }
    let failing: Vec<String> = report.iter().filter(|a| a.failures > 0).map(|a| a.name.clone()).collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(failing))
    }
}
