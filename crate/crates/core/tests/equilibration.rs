use purify_core::equilibrate::*;
use purify_core::genmodel::*;
use purify_core::rng::Stream;
use purify_core::{DenseMatrix, Error};

fn instance(seed: u64, heavy: f64) -> (ModelSpec, DenseMatrix) {
    let (m, n) = (18, 6);
    let root = Stream::new(seed);
    let a_star = gen_ground_truth(GroundTruthKind::RandomNonnegUnitL1, m, n, &root.child("ground_truth")).unwrap();
    let weights = WeightDist::IndependentBounded(
        (0..n)
            .map(|j| Marginal::ScaledBernoulli { p: 0.3, scale: if j < n / 2 { 1.0 } else { heavy.sqrt() } })
            .collect(),
    );
    let init = InitSpec { ell: 0.0, e_sign: ESign::NonNegative, n0_level: 0.0, sigma_range: (1.0, 1.0) };
    let spec = ModelSpec { ground_truth: a_star.clone(), weights, noise: NoiseModel::None, init };
    (spec, a_star)
}

fn params(decay: ThresholdDecay) -> EquilParams {
    EquilParams {
        alpha: 0.0,
        eta: 0.25,
        inner_iterations: 1,
        epsilon: 0.02,
        lambda0: None,
        batch_size: 4000,
        seed: 3,
        max_outer: None,
        decay,
    }
}

#[test]
fn balanced_weights_stay_balanced() {
    let (spec, a0) = instance(1, 1.0);
    let out = equilibration(&a0, &params(ThresholdDecay::Quadratic), &spec).unwrap();
    assert!(out.state.in_set.iter().all(|&b| b));
    assert!(balance_ratio(&spec.weights, &out.d) <= KAPPA);
}

#[test]
fn tenfold_imbalance_is_removed() {
    let (spec, a0) = instance(2, 10.0);
    assert!((balance_ratio(&spec.weights, &[1.0; 6]) - 10.0).abs() < 1e-12);
    let mut seen = 0;
    let out = equilibration_with(&a0, &params(ThresholdDecay::Quadratic), &spec, &mut |_| seen += 1).unwrap();
    assert_eq!(seen, out.log.len());
    assert!(out.log.windows(2).all(|w| w[0].pass <= w[1].pass));
    let ratio = balance_ratio(&spec.weights, &out.d);
    assert!(ratio <= KAPPA, "ratio {ratio}");
    // Heavy features join the set first and get the larger scale.
    assert!(out.d[3..].iter().all(|&h| out.d[..3].iter().all(|&l| h > l)));
}

#[test]
fn linear_decay_leaves_the_imbalance() {
    let (spec, a0) = instance(2, 10.0);
    let out = equilibration(&a0, &params(ThresholdDecay::Linear), &spec).unwrap();
    assert!(balance_ratio(&spec.weights, &out.d) > KAPPA);
}

#[test]
fn pass_cap_is_reported_with_state() {
    let (spec, a0) = instance(2, 10.0);
    let p = EquilParams { max_outer: Some(2), ..params(ThresholdDecay::Quadratic) };
    match equilibration(&a0, &p, &spec) {
        Err(Error::MaxOuterExceeded { passes, in_set, n, state }) => {
            assert_eq!(passes, 2);
            assert_eq!(n, 6);
            assert_eq!(state.set_size(), in_set);
            assert!(in_set < 6);
        }
        other => panic!("expected cap error, got {other:?}"),
    }
}

#[test]
fn same_seed_same_result() {
    let (spec, a0) = instance(4, 10.0);
    let p = params(ThresholdDecay::Quadratic);
    assert_eq!(equilibration(&a0, &p, &spec).unwrap(), equilibration(&a0, &p, &spec).unwrap());
}

#[test]
fn epsilon_outside_unit_interval_is_rejected() {
    let (spec, a0) = instance(1, 1.0);
    for epsilon in [0.0, 1.0, 1.5] {
        let p = EquilParams { epsilon, ..params(ThresholdDecay::Quadratic) };
        assert!(matches!(equilibration(&a0, &p, &spec), Err(Error::BadParams(_))));
    }
}
