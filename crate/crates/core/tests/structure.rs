use dlssm::init::{kaiming_uniform, seeded_rng};
use dlssm::lmu::lmu_forward;
use dlssm::pdmu::{build_gate_matrix, gate_sequences, pdmu_forward, PdmuLayerParams, Variant};
use dlssm::{LayerConfig, Matrix, Mode};
use proptest::prelude::*;

fn cfg(input_dim: usize, hidden_dim: usize, order: usize, delays: usize) -> LayerConfig {
    LayerConfig {
        input_dim,
        hidden_dim,
        memory_order: Some(order),
        delays,
        ..LayerConfig::default()
    }
}

/// `h[k] = m[k] + Σ_j g[k-j][j-1] m[k-j]` plus the mirrored backward sum.
fn loop_form(m: &Matrix, fwd: &Matrix, bwd: Option<&Matrix>) -> Matrix {
    let n = fwd.cols();
    let mut h = m.clone();
    for k in 0..m.rows() {
        for j in 1..=n {
            if k >= j {
                for c in 0..m.cols() {
                    h[(k, c)] += fwd[(k - j, j - 1)] * m[(k - j, c)];
                }
            }
            if let Some(b) = bwd {
                if k + j < m.rows() {
                    for c in 0..m.cols() {
                        h[(k, c)] += b[(k + j, j - 1)] * m[(k + j, c)];
                    }
                }
            }
        }
    }
    h
}

fn variant_of(i: usize) -> Variant {
    [Variant::Plain, Variant::Bidirectional, Variant::Efficient][i]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gate_matrix_structure(v in 0usize..3, delays in 1usize..=10, len in 1usize..80, seed in 0u64..10_000) {
        let variant = variant_of(v);
        let mut rng = seeded_rng(seed);
        let params = PdmuLayerParams::new(&cfg(3, 4, 5, delays), variant, &mut rng).unwrap();
        let x = kaiming_uniform(len, 3, 1, &mut rng).scaled(2.0);
        let gates = gate_sequences(&params, &x).unwrap();
        let gm = build_gate_matrix(&gates.forward, gates.backward.as_ref(), variant).unwrap();
        let dense = gm.dense();
        for i in 0..len {
            prop_assert_eq!(dense[(i, i)], 1.0);
            for k in 0..len {
                if i.abs_diff(k) > delays {
                    prop_assert_eq!(dense[(i, k)], 0.0);
                }
                if variant != Variant::Bidirectional && k < i {
                    prop_assert_eq!(dense[(i, k)], 0.0);
                }
            }
            let row = gm.upper_band().row(i);
            let nonzero = row.iter().filter(|&&g| g != 0.0).count();
            if variant == Variant::Efficient {
                prop_assert_eq!(nonzero, 1);
            } else {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                if let Some(lower) = gm.lower_band() {
                    prop_assert!((lower.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn matrix_form_equals_loop_form(v in 0usize..3, delays in 1usize..=6, len in 1usize..60, seed in 0u64..10_000) {
        let variant = variant_of(v);
        let mut rng = seeded_rng(seed);
        let params = PdmuLayerParams::new(&cfg(2, 3, 4, delays), variant, &mut rng).unwrap();
        let x = kaiming_uniform(len, 2, 1, &mut rng).scaled(2.0);
        let (_, m) = lmu_forward(&params.core, &x, Mode::Parallel).unwrap();
        let gates = gate_sequences(&params, &x).unwrap();
        let gm = build_gate_matrix(&gates.forward, gates.backward.as_ref(), variant).unwrap();
        let matrix = gm.combine(&m).unwrap();
        let upper = gm.upper_band().clone();
        let looped = loop_form(&m, &upper, gm.lower_band());
        prop_assert!(matrix.sub(&looped).max_abs() <= 1e-12);
        let (_, h) = pdmu_forward(&params, &x, Mode::Parallel).unwrap();
        prop_assert!(h.sub(&looped).max_abs() <= 1e-12);
    }
}

#[test]
fn single_delay_is_a_skip_connection() {
    for seed in 0..5 {
        let mut rng = seeded_rng(seed);
        let params = PdmuLayerParams::new(&cfg(3, 5, 6, 1), Variant::Plain, &mut rng).unwrap();
        let x = kaiming_uniform(50, 3, 1, &mut rng);
        let (_, m) = lmu_forward(&params.core, &x, Mode::Parallel).unwrap();
        for mode in [Mode::Parallel, Mode::Sequential] {
            let (_, h) = pdmu_forward(&params, &x, mode).unwrap();
            assert_eq!(h.row(0), m.row(0));
            for k in 1..50 {
                let expect: Vec<f64> = m
                    .row(k)
                    .iter()
                    .zip(m.row(k - 1))
                    .map(|(a, b)| a + b)
                    .collect();
                if mode == Mode::Parallel {
                    assert_eq!(h.row(k), expect.as_slice(), "step {k}");
                } else {
                    for (a, b) in h.row(k).iter().zip(&expect) {
                        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                    }
                }
            }
        }
    }
}

#[test]
fn runtime_state_counts() {
    for (n_hidden, q, n) in [(1, 1, 1), (64, 64, 5), (128, 128, 10), (7, 3, 31)] {
        let params = PdmuLayerParams::zeros(&cfg(2, n_hidden, q, n), Variant::Plain).unwrap();
        assert_eq!(params.runtime_state_count(), n_hidden + q + n);
    }
}
