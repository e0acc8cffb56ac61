use std::f64::consts::PI;

use dlssm::layer::legendre_memory;
use dlssm::lmu::window_reconstruct;
use dlssm::ssm::ScanPath;
use dlssm::Matrix;

const THETA: f64 = 64.0;

/// RMS error of the half-window reconstruction of a sinusoid with period
/// `4 * THETA`, measured after the window has filled three times.
fn half_window_rms(order: usize) -> f64 {
    let len = 1024;
    let period = 4.0 * THETA;
    let signal: Vec<f64> = (0..len)
        .map(|k| (2.0 * PI * k as f64 / period).sin())
        .collect();
    let engine = legendre_memory(order, THETA, 1.0, 64).unwrap();
    let m = engine.forward(
        &Matrix::from_vec(len, 1, signal.clone()),
        ScanPath::Sequential,
    );
    let lag = (THETA / 2.0) as usize;
    let start = 3 * THETA as usize;
    let sq: f64 = (start..len)
        .map(|k| {
            let est = window_reconstruct(m.row(k), 0.5);
            (est - signal[k - lag]).powi(2)
        })
        .sum();
    (sq / (len - start) as f64).sqrt()
}

#[test]
fn half_window_sinusoid() {
    let rms = half_window_rms(16);
    assert!(rms <= 0.1, "rms {rms}");
}

#[test]
fn error_does_not_grow_with_order() {
    let errs: Vec<f64> = [4, 8, 16, 32].iter().map(|&q| half_window_rms(q)).collect();
    for w in errs.windows(2) {
        assert!(w[1] <= w[0] + 1e-3, "{errs:?}");
    }
}
