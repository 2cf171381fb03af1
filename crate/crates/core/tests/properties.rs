use proptest::prelude::*;
use purify_core::analysis::{col_error, coupled_potential, decompose, Decomposition, BETA};
use purify_core::matrix::{
    col_normalize, norm_col_induced, norm_row_induced, norm_sym, relu_offset, split_pos_neg,
};
use purify_core::purify::{empirical_update, Pairing};
use purify_core::rng::Stream;
use purify_core::{linalg, DenseMatrix};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols)
        .prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
}

fn any_matrix() -> impl Strategy<Value = DenseMatrix> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| matrix(r, c))
}

fn tall_nonneg(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    prop::collection::vec(0.0..1.0f64, rows * cols)
        .prop_map(move |v| DenseMatrix::new(rows, cols, v).unwrap())
        .prop_filter("full column rank", linalg::has_full_column_rank)
}

proptest! {
    #[test]
    fn induced_norms_swap_under_transpose(a in any_matrix()) {
        prop_assert_eq!(norm_col_induced(&a), norm_row_induced(&a.transpose()));
        prop_assert_eq!(norm_sym(&a), norm_sym(&a.transpose()));
        prop_assert!(norm_sym(&a) >= norm_col_induced(&a));
        prop_assert!(norm_sym(&a) >= norm_row_induced(&a));
    }

    #[test]
    fn induced_norms_are_submultiplicative((a, b) in (1usize..6, 1usize..6, 1usize..6)
        .prop_flat_map(|(r, k, c)| (matrix(r, k), matrix(k, c))))
    {
        let ab = a.matmul(&b);
        let tol = 1e-12;
        prop_assert!(norm_col_induced(&ab) <= norm_col_induced(&a) * norm_col_induced(&b) + tol);
        prop_assert!(norm_row_induced(&ab) <= norm_row_induced(&a) * norm_row_induced(&b) + tol);
        prop_assert!(norm_sym(&ab) <= norm_sym(&a) * norm_sym(&b) + tol);
    }

    #[test]
    fn induced_norms_bound_vector_gain(a in matrix(4, 3), x in prop::collection::vec(-1.0..1.0f64, 3)) {
        let ax = a.matvec(&x);
        let l1 = |v: &[f64]| v.iter().map(|t| t.abs()).sum::<f64>();
        let linf = |v: &[f64]| v.iter().fold(0.0_f64, |m, t| m.max(t.abs()));
        prop_assert!(l1(&ax) <= norm_col_induced(&a) * l1(&x) + 1e-12);
        prop_assert!(linf(&ax) <= norm_row_induced(&a) * linf(&x) + 1e-12);
    }

    #[test]
    fn split_reassembles(a in any_matrix()) {
        let (p, n) = split_pos_neg(&a);
        prop_assert_eq!(p.sub(&n), a.clone());
        prop_assert!(p.as_slice().iter().all(|&v| v >= 0.0));
        prop_assert!(n.as_slice().iter().all(|&v| v >= 0.0));
        prop_assert!(p.as_slice().iter().zip(n.as_slice()).all(|(x, y)| x * y == 0.0));
    }

    #[test]
    fn relu_offset_is_monotone_and_shrinking(v in prop::collection::vec(-3.0..3.0f64, 1..20), alpha in 0.0..1.0f64) {
        let out = relu_offset(&v, alpha);
        for (o, x) in out.iter().zip(&v) {
            prop_assert!(*o >= 0.0);
            prop_assert!(*o <= x.abs());
            prop_assert_eq!(*o, (x - alpha).max(0.0));
        }
        let shifted: Vec<f64> = v.iter().map(|x| x + 0.5).collect();
        for (a, b) in out.iter().zip(relu_offset(&shifted, alpha)) {
            prop_assert!(b >= *a);
        }
    }

    #[test]
    fn decomposition_round_trips(a_star in tall_nonneg(6, 3), a in matrix(6, 3)) {
        let d = decompose(&a, &a_star).unwrap();
        let back = d.reconstruct(&a_star);
        for (x, y) in back.as_slice().iter().zip(a.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!((0..3).all(|i| d.e_mat[(i, i)] == 0.0));
        // N is orthogonal to every column of A*.
        let g = a_star.transpose().matmul(&d.n_mat);
        prop_assert!(g.norm_max() < 1e-9);
    }

    #[test]
    fn decomposition_of_exact_combination_has_no_residual(a_star in tall_nonneg(5, 3), c in matrix(3, 3)) {
        let a = a_star.matmul(&c);
        let d = decompose(&a, &a_star).unwrap();
        prop_assert!(d.n_mat.norm_max() < 1e-8);
        for (x, y) in d.coefficients().as_slice().iter().zip(c.as_slice()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn potential_is_positively_homogeneous(e in matrix(4, 4), c in 0.0..5.0f64) {
        let mk = |scale: f64| Decomposition {
            sigma: vec![1.0; 4],
            e_mat: DenseMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { scale * e[(i, j)] }),
            n_mat: DenseMatrix::zeros(4, 4),
        };
        let p1 = coupled_potential(&mk(1.0));
        let pc = coupled_potential(&mk(c));
        prop_assert!((pc - c * p1).abs() <= 1e-12 * (1.0 + pc.abs()));
        let (pos, neg) = split_pos_neg(&mk(1.0).e_mat);
        prop_assert!((p1 - norm_sym(&pos) - BETA * norm_sym(&neg)).abs() < 1e-12);
    }

    #[test]
    fn column_error_ignores_column_scale(a_star in tall_nonneg(6, 3), s in prop::collection::vec(0.1..10.0f64, 3)) {
        let a_star = col_normalize(&a_star).unwrap();
        let scaled = DenseMatrix::from_fn(6, 3, |i, j| a_star[(i, j)] * s[j]);
        prop_assert!(col_error(&scaled, &a_star).unwrap() < 1e-12);
    }

    #[test]
    fn closed_form_equals_all_ordered_pairs(
        ys in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 2..12),
        seed in any::<u64>(),
    ) {
        let mut rng = Stream::new(seed).draw(0);
        use rand::Rng;
        let xs: Vec<Vec<f64>> = ys.iter().map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let refs: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
        let got = empirical_update(&refs, &xs, Pairing::ClosedFormAllPairs, &Stream::new(0)).unwrap();
        let n = ys.len();
        let naive = DenseMatrix::from_fn(4, 3, |i, j| {
            let mut acc = 0.0;
            for k in 0..n {
                for l in 0..n {
                    acc += (ys[k][i] - ys[l][i]) * (xs[k][j] - xs[l][j]);
                }
            }
            acc / (n * n) as f64
        });
        for (x, y) in got.as_slice().iter().zip(naive.as_slice()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(a in any_matrix()) {
        prop_assert_eq!(DenseMatrix::from_csv(&a.to_csv()).unwrap(), a);
    }
}

#[test]
fn identical_samples_give_exact_zero_update() {
    let y = vec![0.3, 0.1, 0.7];
    let ys: Vec<&[f64]> = vec![&y; 5];
    let xs = vec![vec![0.2, 0.4]; 5];
    let d = empirical_update(&ys, &xs, Pairing::ClosedFormAllPairs, &Stream::new(1)).unwrap();
    assert!(d.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn random_pairs_approach_closed_form() {
    let stream = Stream::new(9);
    let mut rng = stream.draw(0);
    use rand::Rng;
    let ys: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
    let xs: Vec<Vec<f64>> = (0..50).map(|_| (0..2).map(|_| rng.random::<f64>()).collect()).collect();
    let refs: Vec<&[f64]> = ys.iter().map(|y| y.as_slice()).collect();
    let exact = empirical_update(&refs, &xs, Pairing::ClosedFormAllPairs, &stream).unwrap();
    let approx = empirical_update(&refs, &xs, Pairing::RandomPairs(400_000), &stream.child("pairs")).unwrap();
    assert!(exact.sub(&approx).norm_max() < 5e-3);
}
