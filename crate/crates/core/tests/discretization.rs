use dlssm::ssm::{
    direct_convolve, fft_convolve, max_relative_error, pade_matrices, parallel_scan,
    sequential_scan, zoh_discretize, ContinuousSystem, DiscreteSystem, ImpulseKernel,
};
use dlssm::Matrix;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Augmented exponential `exp([[A, B], [0, 0]] dt)` through nalgebra.
fn oracle(sys: &ContinuousSystem, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = sys.order();
    let mut aug = DMatrix::<f64>::zeros(q + 1, q + 1);
    for i in 0..q {
        for j in 0..q {
            aug[(i, j)] = sys.a()[(i, j)] * dt;
        }
        aug[(i, q)] = sys.b()[(i, 0)] * dt;
    }
    let e = aug.exp();
    (
        e.view((0, 0), (q, q)).into_owned(),
        e.view((0, q), (q, 1)).into_owned(),
    )
}

fn max_diff(ours: &Matrix, theirs: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..ours.rows() {
        for j in 0..ours.cols() {
            worst = worst.max((ours[(i, j)] - theirs[(i, j)]).abs());
        }
    }
    worst
}

#[test]
fn pade_systems_match_dense_exponential() {
    for q in 1..=64 {
        let raw = pade_matrices(q).unwrap();
        for (sys, dt) in [
            (raw.clone(), 1.0),
            (raw.time_scaled(q as f64).unwrap(), 1.0),
            (raw.clone(), 0.05),
        ] {
            let d = zoh_discretize(&sys, dt).unwrap();
            let (a, b) = oracle(&sys, dt);
            assert!(max_diff(d.a_bar(), &a) <= 1e-12, "order {q} dt {dt}");
            assert!(max_diff(d.b_bar(), &b) <= 1e-12, "order {q} dt {dt}");
        }
    }
}

#[test]
fn input_matrix_matches_inverse_route() {
    // second route for B: A^-1 (exp(A dt) - I) B, valid because Pade A is invertible
    for q in [2, 5, 12, 24] {
        let sys = pade_matrices(q).unwrap().time_scaled(q as f64).unwrap();
        let d = zoh_discretize(&sys, 1.0).unwrap();
        let a = DMatrix::from_fn(q, q, |i, j| sys.a()[(i, j)]);
        let b = DMatrix::from_fn(q, 1, |i, _| sys.b()[(i, 0)]);
        let e = a.clone().exp();
        let b_bar = a.try_inverse().unwrap() * (e - DMatrix::identity(q, q)) * b;
        assert!(max_diff(d.b_bar(), &b_bar) <= 1e-11, "order {q}");
    }
}

#[test]
fn scalar_decay_closed_form() {
    let sys =
        ContinuousSystem::new(Matrix::from_rows(&[[-1.0]]), Matrix::from_rows(&[[1.0]])).unwrap();
    for dt in [1e-3, 0.1, std::f64::consts::LN_2, 1.0, 2.5, 10.0] {
        let d = zoh_discretize(&sys, dt).unwrap();
        assert!((d.a_bar()[(0, 0)] - (-dt).exp()).abs() <= 1e-14, "dt {dt}");
        assert!(
            (d.b_bar()[(0, 0)] - (1.0 - (-dt).exp())).abs() <= 1e-14,
            "dt {dt}"
        );
    }
}

#[test]
fn pade_entries_are_signed_odd_integers() {
    for q in 1..=32 {
        let sys = pade_matrices(q).unwrap();
        for i in 0..q {
            for j in 0..q {
                assert_eq!(sys.a()[(i, j)].abs(), (2 * i + 1) as f64);
            }
            assert_eq!(sys.b()[(i, 0)].abs(), (2 * i + 1) as f64);
        }
    }
}

fn random_system(order: usize, seed: u64) -> DiscreteSystem {
    let sys = pade_matrices(order)
        .unwrap()
        .time_scaled(order as f64 + seed as f64 % 7.0)
        .unwrap();
    zoh_discretize(&sys, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn semigroup(order in 1usize..12, dt in 0.05f64..2.0) {
        let sys = pade_matrices(order).unwrap().time_scaled(order as f64).unwrap();
        let one = zoh_discretize(&sys, dt).unwrap();
        let two = zoh_discretize(&sys, 2.0 * dt).unwrap();
        let squared = one.a_bar().matmul(one.a_bar());
        prop_assert!(squared.sub(two.a_bar()).max_abs() <= 1e-10);
    }

    #[test]
    fn scan_paths_agree(order in 1usize..=16, len in 1usize..300, seed in 0u64..1000, u in prop::collection::vec(-1.0f64..1.0, 300)) {
        let d = random_system(order, seed);
        let u = &u[..len];
        let seq = sequential_scan(&d, u, &vec![0.0; order]).unwrap();
        let par = parallel_scan(&d, u).unwrap();
        let kernel = ImpulseKernel::new(&d, len);
        let fft = fft_convolve(&kernel, u).unwrap();
        let direct = direct_convolve(&kernel, u).unwrap();
        prop_assert!(max_relative_error(&par, &seq) <= 1e-8);
        prop_assert!(max_relative_error(&fft, &seq) <= 1e-8);
        prop_assert!(max_relative_error(&direct, &seq) <= 1e-8);
    }

    #[test]
    fn scan_is_linear(order in 1usize..8, alpha in -2.0f64..2.0, beta in -2.0f64..2.0,
                      u in prop::collection::vec(-1.0f64..1.0, 80), w in prop::collection::vec(-1.0f64..1.0, 80)) {
        let d = random_system(order, 3);
        let mix: Vec<f64> = u.iter().zip(&w).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = parallel_scan(&d, &mix).unwrap();
        let mut rhs = parallel_scan(&d, &u).unwrap().scaled(alpha);
        rhs.axpy(beta, &parallel_scan(&d, &w).unwrap());
        prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-10 * (1.0 + rhs.max_abs()));
    }
}
