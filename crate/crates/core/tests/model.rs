use purify_core::analysis::decompose;
use purify_core::genmodel::*;
use purify_core::matrix::{norm_row_induced, norm_sym};
use purify_core::rng::Stream;
use purify_core::{linalg, DenseMatrix, Error};

fn mixed() -> WeightDist {
    WeightDist::IndependentBounded(vec![
        Marginal::ScaledBernoulli { p: 0.1, scale: 0.5 },
        Marginal::Uniform { lo: 0.0, hi: 1.0 },
        Marginal::ScaledBernoulli { p: 0.4, scale: 1.0 },
        Marginal::Uniform { lo: 0.2, hi: 0.6 },
    ])
}

#[test]
fn bernoulli_uniform_moments() {
    let m = moments(&WeightDist::BernoulliUniform { s: 3.0, n: 50 });
    assert_eq!((m.c1, m.c2, m.c2_upper, m.mu), (3.0, 3.0, 3.0, 1.0));
}

#[test]
fn scaled_bernoulli_moments() {
    let m = Marginal::ScaledBernoulli { p: 0.1, scale: 0.5 };
    assert!((m.mean() - 0.05).abs() < 1e-15);
    assert!((m.second_moment() - 0.025).abs() < 1e-15);
}

#[test]
fn mixed_moments_match_monte_carlo() {
    let dist = mixed();
    let draws = 1_000_000;
    let n = dist.n();
    let mut rng = Stream::new(17).draw(0);
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    let mut s4 = vec![0.0; n];
    for _ in 0..draws {
        let x = sample_weights(&dist, &mut rng);
        for j in 0..n {
            s1[j] += x[j];
            s2[j] += x[j] * x[j];
            s4[j] += x[j].powi(4);
        }
    }
    let nf = draws as f64;
    for (j, m) in dist.marginals().iter().enumerate() {
        let se_mean = (m.variance() / nf).sqrt();
        assert!((s1[j] / nf - m.mean()).abs() <= 3.0 * se_mean, "mean of coordinate {j}");
        let var_sq = s4[j] / nf - (s2[j] / nf).powi(2);
        let se_sq = (var_sq / nf).sqrt();
        assert!((s2[j] / nf - m.second_moment()).abs() <= 3.0 * se_sq, "second moment of coordinate {j}");
    }
    let mo = moments(&dist);
    let max_mean = dist.marginals().iter().map(|m| m.mean()).fold(0.0, f64::max);
    assert!((mo.c1 - 4.0 * max_mean).abs() < 1e-15);
}

#[test]
fn rademacher_noise_is_centred() {
    let a = DenseMatrix::identity(3);
    let model = NoiseModel::Unbiased { level: 0.01, dist: UnbiasedDist::Rademacher };
    let mut rng = Stream::new(4).draw(0);
    let draws = 1_000_000;
    let mut sum = [0.0; 3];
    for _ in 0..draws {
        let nu = sample_noise(&model, &[0.0; 3], &a, None, &mut rng);
        for i in 0..3 {
            assert_eq!(nu[i].abs(), 0.01);
            sum[i] += nu[i];
        }
    }
    for s in sum {
        assert!((s / draws as f64).abs() <= 3e-5);
    }
}

#[test]
fn noise_is_bounded_by_level() {
    let a = DenseMatrix::from_fn(5, 2, |i, j| (i + j) as f64 - 2.0);
    let mut rng = Stream::new(8).draw(0);
    for model in [
        NoiseModel::Adversarial { level: 0.3, strategy: AdversaryStrategy::ConstantBias },
        NoiseModel::Adversarial { level: 0.3, strategy: AdversaryStrategy::SignAligned },
        NoiseModel::Adversarial { level: 0.3, strategy: AdversaryStrategy::RandomBounded },
        NoiseModel::Unbiased { level: 0.3, dist: UnbiasedDist::UniformSym },
        NoiseModel::Unbiased { level: 0.3, dist: UnbiasedDist::Rademacher },
    ] {
        for _ in 0..200 {
            let nu = sample_noise(&model, &[1.0, 0.0], &a, Some(&a), &mut rng);
            assert!(nu.iter().all(|v| v.abs() <= 0.3));
        }
    }
}

fn init_spec(ell: f64, e_sign: ESign, n0: f64) -> InitSpec {
    InitSpec { ell, e_sign, n0_level: n0, sigma_range: (1.0 - ell, 1.0 + ell) }
}

#[test]
fn warm_start_hits_requested_levels() {
    let s = Stream::new(2);
    let a_star = gen_ground_truth(GroundTruthKind::RandomNonnegUnitL1, 40, 10, &s.child("gt")).unwrap();
    for (k, e_sign) in [ESign::Mixed, ESign::NonNegative].into_iter().enumerate() {
        let init = init_spec(0.1, e_sign, 0.05);
        let a0 = gen_init(&a_star, &init, &s.child("init").index(k as u64)).unwrap();
        let d = decompose(&a0, &a_star).unwrap();
        assert!((norm_sym(&d.e_mat) - 0.1).abs() < 1e-9);
        assert!((norm_row_induced(&d.n_mat) - 0.05).abs() < 1e-9);
        assert!(d.sigma.iter().all(|&v| (0.9 - 1e-9..=1.1 + 1e-9).contains(&v)));
        if e_sign == ESign::NonNegative {
            assert!(d.e_mat.as_slice().iter().all(|&v| v >= -1e-12));
        }
    }
}

#[test]
fn square_ground_truth_cannot_carry_residual() {
    let a_star = DenseMatrix::identity(4);
    let err = gen_init(&a_star, &init_spec(0.1, ESign::Mixed, 0.1), &Stream::new(0)).unwrap_err();
    assert!(matches!(err, Error::BadDims(_)));
}

#[test]
fn ground_truth_is_deterministic_and_full_rank() {
    let s = Stream::new(77).child("ground_truth");
    let a = gen_ground_truth(GroundTruthKind::RandomNonnegUnitL1, 60, 30, &s).unwrap();
    let b = gen_ground_truth(GroundTruthKind::RandomNonnegUnitL1, 60, 30, &s).unwrap();
    assert_eq!(a, b);
    assert!(linalg::has_full_column_rank(&a));
}

#[test]
fn batches_do_not_depend_on_thread_count() {
    let n = 8;
    let a_star = gen_ground_truth(GroundTruthKind::RandomNonnegUnitL1, 20, n, &Stream::new(1)).unwrap();
    let spec = ModelSpec {
        ground_truth: a_star,
        weights: WeightDist::BernoulliUniform { s: 2.0, n },
        noise: NoiseModel::Unbiased { level: 0.01, dist: UnbiasedDist::UniformSym },
        init: init_spec(0.1, ESign::Mixed, 0.0),
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| sample_batch(&spec, 1000, None, &Stream::new(3)).unwrap())
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(one.len(), four.len());
    for (a, b) in one.iter().zip(&four) {
        assert_eq!(a.y, b.y);
        assert_eq!(a.x_star, b.x_star);
    }
}
