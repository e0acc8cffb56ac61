//! Linear time-invariant state-space systems.
//!
//! A continuous system `m'(t) = A m(t) + B u(t)` is discretized with a
//! zero-order hold into `m[k] = Ā m[k-1] + B̄ u[k]`, which can then be
//! evaluated three ways that must agree:
//!
//! * [`sequential_scan`]: the recurrence, O(1) state per step;
//! * direct causal convolution with the impulse kernel `Ā^j B̄`;
//! * FFT convolution ([`fft_convolve`]), used for long sequences.
//!
//! Sequences are 0-based here: `u[0]` is the first input and row 0 of the
//! output is the state after consuming it.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::linalg::{axpy_slice, expm, spectral_norm, Matrix};

/// Sequence length at which the parallel path switches from direct
/// convolution to FFT convolution.
pub const DEFAULT_FFT_THRESHOLD: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSystem {
    a: Matrix,
    b: Matrix,
}

impl ContinuousSystem {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        let order = a.rows();
        if order == 0 || a.cols() != order {
            return Err(Error::invalid(format!(
                "state matrix must be square and non-empty, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if b.shape() != (order, 1) {
            return Err(Error::invalid(format!(
                "input matrix must be {order}x1, got {}x{}",
                b.rows(),
                b.cols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn order(&self) -> usize {
        self.a.rows()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// The same dynamics sped up by `1/theta`, i.e. `(A/θ, B/θ)`.
    pub fn time_scaled(&self, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::invalid(format!(
                "window must be positive, got {theta}"
            )));
        }
        Ok(Self {
            a: self.a.scaled(1.0 / theta),
            b: self.b.scaled(1.0 / theta),
        })
    }
}

/// Padé approximant of a pure delay, in the Legendre basis:
/// `a_ij = (2i+1) * (-1 if i < j else (-1)^(i-j+1))`, `b_i = (2i+1) (-1)^i`.
pub fn pade_matrices(order: usize) -> Result<ContinuousSystem> {
    if order == 0 {
        return Err(Error::invalid("state-space order must be at least 1"));
    }
    let mut a = Matrix::zeros(order, order);
    let mut b = Matrix::zeros(order, 1);
    for i in 0..order {
        let scale = (2 * i + 1) as f64;
        for j in 0..order {
            let sign = if i < j {
                -1.0
            } else if (i - j + 1) % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            a[(i, j)] = scale * sign;
        }
        b[(i, 0)] = if i % 2 == 0 { scale } else { -scale };
    }
    ContinuousSystem::new(a, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    a_bar: Matrix,
    b_bar: Matrix,
    dt: f64,
}

impl DiscreteSystem {
    /// Wraps an already-discrete system (e.g. for tests with hand-picked
    /// `Ā`, `B̄`).
    pub fn new(a_bar: Matrix, b_bar: Matrix, dt: f64) -> Result<Self> {
        let order = a_bar.rows();
        if order == 0 || a_bar.cols() != order || b_bar.shape() != (order, 1) {
            return Err(Error::invalid(format!(
                "discrete system needs square A_bar and matching B_bar, got {:?} and {:?}",
                a_bar.shape(),
                b_bar.shape()
            )));
        }
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { a_bar, b_bar, dt })
    }

    pub fn order(&self) -> usize {
        self.a_bar.rows()
    }

    pub fn a_bar(&self) -> &Matrix {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &Matrix {
        &self.b_bar
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn impulse_kernel(&self, len: usize) -> ImpulseKernel {
        ImpulseKernel::new(self, len)
    }

    /// One recurrence step in place: `m <- Ā m + B̄ u`.
    #[inline]
    pub fn step(&self, m: &mut [f64], u: f64, scratch: &mut [f64]) {
        self.a_bar.matvec_into(m, scratch);
        for (i, (mi, si)) in m.iter_mut().zip(scratch.iter()).enumerate() {
            *mi = si + self.b_bar.as_slice()[i] * u;
        }
    }
}

/// Exact zero-order-hold discretization.
///
/// `Ā = exp(A dt)` and `B̄ = A⁻¹(exp(A dt) − I) B` are read off the blocks of
/// `exp([[A, B], [0, 0]] dt)`, so `A` never has to be inverted.
pub fn zoh_discretize(sys: &ContinuousSystem, dt: f64) -> Result<DiscreteSystem> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!(
            "dt must be positive and finite, got {dt}"
        )));
    }
    let n = sys.order();
    let mut aug = Matrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = sys.a[(i, j)] * dt;
        }
        aug[(i, n)] = sys.b[(i, 0)] * dt;
    }
    let e = expm(&aug);
    if !e.is_finite() {
        return Err(Error::NumericOverflow {
            dt,
            spectral_norm: spectral_norm(&sys.a.scaled(dt)),
        });
    }
    let mut a_bar = Matrix::zeros(n, n);
    let mut b_bar = Matrix::zeros(n, 1);
    for i in 0..n {
        for j in 0..n {
            a_bar[(i, j)] = e[(i, j)];
        }
        b_bar[(i, 0)] = e[(i, n)];
    }
    Ok(DiscreteSystem { a_bar, b_bar, dt })
}

/// Impulse response taps `Ā^j B̄`, one row per lag.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseKernel {
    taps: Matrix,
}

impl ImpulseKernel {
    pub fn new(sys: &DiscreteSystem, len: usize) -> Self {
        let order = sys.order();
        let mut taps = Matrix::zeros(len, order);
        if len > 0 {
            taps.row_mut(0).copy_from_slice(sys.b_bar.as_slice());
            for j in 1..len {
                let next = sys.a_bar.matvec(taps.row(j - 1));
                taps.row_mut(j).copy_from_slice(&next);
            }
        }
        Self { taps }
    }

    pub fn len(&self) -> usize {
        self.taps.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.rows() == 0
    }

    pub fn order(&self) -> usize {
        self.taps.cols()
    }

    pub fn tap(&self, j: usize) -> &[f64] {
        self.taps.row(j)
    }

    pub fn taps(&self) -> &Matrix {
        &self.taps
    }
}

fn check_input(u: &[f64]) -> Result<()> {
    if u.is_empty() {
        return Err(Error::invalid("input sequence must have at least one step"));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input sequence contains non-finite values"));
    }
    Ok(())
}

/// `m[k] = Ā m[k-1] + B̄ u[k]` starting from `m0`.
pub fn sequential_scan(sys: &DiscreteSystem, u: &[f64], m0: &[f64]) -> Result<Matrix> {
    check_input(u)?;
    let order = sys.order();
    if m0.len() != order {
        return Err(Error::invalid(format!(
            "initial state has length {}, system order is {order}",
            m0.len()
        )));
    }
    let mut out = Matrix::zeros(u.len(), order);
    let mut state = m0.to_vec();
    let mut scratch = vec![0.0; order];
    for (k, &uk) in u.iter().enumerate() {
        sys.step(&mut state, uk, &mut scratch);
        out.row_mut(k).copy_from_slice(&state);
    }
    Ok(out)
}

/// Zero-initial-state response evaluated as a causal convolution with the
/// impulse kernel: FFT for `T >= DEFAULT_FFT_THRESHOLD`, direct below.
pub fn parallel_scan(sys: &DiscreteSystem, u: &[f64]) -> Result<Matrix> {
    parallel_scan_with(sys, u, &ScanConfig::default())
}

pub fn parallel_scan_with(sys: &DiscreteSystem, u: &[f64], cfg: &ScanConfig) -> Result<Matrix> {
    check_input(u)?;
    let kernel = sys.impulse_kernel(u.len());
    match cfg.resolve(u.len()) {
        ScanPath::Fft => fft_convolve(&kernel, u),
        _ => direct_convolve(&kernel, u),
    }
}

/// Adds the free response `Ā^(k+1) m0` to a zero-state scan so the parallel
/// path can start from a nonzero state.
pub fn add_initial_state_response(sys: &DiscreteSystem, m0: &[f64], out: &mut Matrix) {
    let mut free = m0.to_vec();
    for k in 0..out.rows() {
        free = sys.a_bar.matvec(&free);
        axpy_slice(1.0, &free, out.row_mut(k));
    }
}

/// Causal convolution `m[k] = Σ_{j<=k} taps[k-j] u[j]`, O(T² · order).
pub fn direct_convolve(kernel: &ImpulseKernel, u: &[f64]) -> Result<Matrix> {
    check_input(u)?;
    check_kernel_len(kernel, u.len())?;
    let t = u.len();
    let mut out = Matrix::zeros(t, kernel.order());
    for k in 0..t {
        let row = out.row_mut(k);
        for (j, &uj) in u[..=k].iter().enumerate() {
            if uj != 0.0 {
                axpy_slice(uj, kernel.tap(k - j), row);
            }
        }
    }
    Ok(out)
}

/// Causal convolution through zero-padded real FFTs (length ≥ 2T − 1), so the
/// circular product reproduces the linear convolution exactly.
pub fn fft_convolve(kernel: &ImpulseKernel, u: &[f64]) -> Result<Matrix> {
    check_input(u)?;
    check_kernel_len(kernel, u.len())?;
    let spectra = KernelSpectra::new(kernel, u.len());
    let mut out = Matrix::zeros(u.len(), kernel.order());
    spectra.convolve_into(u, &mut out, 0);
    Ok(out)
}

fn check_kernel_len(kernel: &ImpulseKernel, t: usize) -> Result<()> {
    if kernel.len() < t {
        return Err(Error::invalid(format!(
            "kernel has {} taps but the sequence has {t} steps",
            kernel.len()
        )));
    }
    Ok(())
}

/// How a scan is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanPath {
    Sequential,
    Direct,
    Fft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanConfig {
    pub fft_threshold: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            fft_threshold: DEFAULT_FFT_THRESHOLD,
        }
    }
}

impl ScanConfig {
    /// The convolution path used for a parallel evaluation of length `t`.
    pub fn resolve(&self, t: usize) -> ScanPath {
        if t >= self.fft_threshold {
            ScanPath::Fft
        } else {
            ScanPath::Direct
        }
    }
}

/// Precomputed real-FFT spectra of every kernel channel.
struct KernelSpectra {
    len: usize,
    fft_len: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    channels: Vec<Vec<Complex<f64>>>,
}

impl KernelSpectra {
    fn new(kernel: &ImpulseKernel, len: usize) -> Self {
        let fft_len = (2 * len).saturating_sub(1).max(2).next_power_of_two();
        let mut planner = RealFftPlanner::<f64>::new();
        let r2c = planner.plan_fft_forward(fft_len);
        let c2r = planner.plan_fft_inverse(fft_len);
        let mut buf = r2c.make_input_vec();
        let channels = (0..kernel.order())
            .map(|ch| {
                buf.fill(0.0);
                for (j, slot) in buf.iter_mut().take(len).enumerate() {
                    *slot = kernel.tap(j)[ch];
                }
                let mut spec = r2c.make_output_vec();
                r2c.process(&mut buf, &mut spec).expect("fft buffer sizes");
                spec
            })
            .collect();
        Self {
            len,
            fft_len,
            r2c,
            c2r,
            channels,
        }
    }

    /// Writes the convolution of `u` with every channel into columns
    /// `col0..col0+order` of `out`.
    fn convolve_into(&self, u: &[f64], out: &mut Matrix, col0: usize) {
        debug_assert_eq!(u.len(), self.len);
        let mut buf = self.r2c.make_input_vec();
        buf[..self.len].copy_from_slice(u);
        let mut u_spec = self.r2c.make_output_vec();
        self.r2c
            .process(&mut buf, &mut u_spec)
            .expect("fft buffer sizes");
        let norm = 1.0 / self.fft_len as f64;
        let mut prod = self.r2c.make_output_vec();
        for (ch, k_spec) in self.channels.iter().enumerate() {
            for ((p, a), b) in prod.iter_mut().zip(&u_spec).zip(k_spec) {
                *p = a * b;
            }
            clear_edge_imag(&mut prod);
            self.c2r
                .process(&mut prod, &mut buf)
                .expect("fft buffer sizes");
            for k in 0..self.len {
                out[(k, col0 + ch)] = buf[k] * norm;
            }
        }
    }

    /// Adjoint of [`Self::convolve_into`]: `g[j] = Σ_ch Σ_{k>=j} taps[k-j][ch] G[k, col0+ch]`,
    /// accumulated into `grad`.
    fn correlate_acc(&self, g: &Matrix, col0: usize, grad: &mut [f64]) {
        let t = self.len;
        let mut buf = self.r2c.make_input_vec();
        let mut acc = self.r2c.make_output_vec();
        let mut spec = self.r2c.make_output_vec();
        for (ch, k_spec) in self.channels.iter().enumerate() {
            buf.fill(0.0);
            for k in 0..t {
                buf[t - 1 - k] = g[(k, col0 + ch)];
            }
            self.r2c
                .process(&mut buf, &mut spec)
                .expect("fft buffer sizes");
            for ((a, s), kk) in acc.iter_mut().zip(&spec).zip(k_spec) {
                *a += s * kk;
            }
        }
        clear_edge_imag(&mut acc);
        self.c2r
            .process(&mut acc, &mut buf)
            .expect("fft buffer sizes");
        let norm = 1.0 / self.fft_len as f64;
        for j in 0..t {
            grad[j] += buf[t - 1 - j] * norm;
        }
    }
}

fn clear_edge_imag(spec: &mut [Complex<f64>]) {
    if let Some(first) = spec.first_mut() {
        first.im = 0.0;
    }
    if let Some(last) = spec.last_mut() {
        last.im = 0.0;
    }
}

/// Kernel taps (and, on demand, their spectra) for one sequence length.
pub struct ScanPlan {
    kernel: ImpulseKernel,
    spectra: OnceLock<KernelSpectra>,
}

impl ScanPlan {
    fn new(sys: &DiscreteSystem, len: usize) -> Self {
        Self {
            kernel: sys.impulse_kernel(len),
            spectra: OnceLock::new(),
        }
    }

    pub fn kernel(&self) -> &ImpulseKernel {
        &self.kernel
    }

    fn spectra(&self) -> &KernelSpectra {
        self.spectra
            .get_or_init(|| KernelSpectra::new(&self.kernel, self.kernel.len()))
    }
}

/// A frozen discrete system plus a per-length cache of scan plans.
///
/// Inputs are `T x c` matrices (c independent scalar channels); outputs are
/// `T x (c·order)` with channel `ch` occupying columns `ch*order..(ch+1)*order`.
pub struct ScanEngine {
    system: Arc<DiscreteSystem>,
    config: ScanConfig,
    plans: Mutex<HashMap<usize, Arc<ScanPlan>>>,
}

impl Clone for ScanEngine {
    fn clone(&self) -> Self {
        Self::with_config(self.system.clone(), self.config)
    }
}

impl std::fmt::Debug for ScanEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScanEngine")
            .field("order", &self.order())
            .field("dt", &self.system.dt())
            .field("config", &self.config)
            .finish()
    }
}

impl ScanEngine {
    pub fn new(system: DiscreteSystem) -> Self {
        Self::with_config(Arc::new(system), ScanConfig::default())
    }

    pub fn with_config(system: Arc<DiscreteSystem>, config: ScanConfig) -> Self {
        Self {
            system,
            config,
            plans: Mutex::new(HashMap::new()),
        }
    }

    pub fn system(&self) -> &DiscreteSystem {
        &self.system
    }

    pub fn config(&self) -> ScanConfig {
        self.config
    }

    pub fn set_config(&mut self, config: ScanConfig) {
        self.config = config;
    }

    pub fn order(&self) -> usize {
        self.system.order()
    }

    pub fn plan(&self, len: usize) -> Arc<ScanPlan> {
        let mut plans = self.plans.lock().expect("scan plan cache poisoned");
        plans
            .entry(len)
            .or_insert_with(|| Arc::new(ScanPlan::new(&self.system, len)))
            .clone()
    }

    /// Resolves the parallel path for a sequence length.
    pub fn parallel_path(&self, len: usize) -> ScanPath {
        self.config.resolve(len)
    }

    /// Zero-initial-state scan of every input column.
    pub fn forward(&self, u: &Matrix, path: ScanPath) -> Matrix {
        let (t, channels) = u.shape();
        let order = self.order();
        let mut out = Matrix::zeros(t, channels * order);
        if t == 0 {
            return out;
        }
        match path {
            ScanPath::Sequential => {
                let mut scratch = vec![0.0; order];
                for ch in 0..channels {
                    let mut state = vec![0.0; order];
                    for k in 0..t {
                        self.system.step(&mut state, u[(k, ch)], &mut scratch);
                        out.row_mut(k)[ch * order..(ch + 1) * order].copy_from_slice(&state);
                    }
                }
            }
            ScanPath::Direct => {
                let plan = self.plan(t);
                for ch in 0..channels {
                    for k in 0..t {
                        for j in 0..=k {
                            let uj = u[(j, ch)];
                            if uj != 0.0 {
                                let tap = plan.kernel.tap(k - j);
                                axpy_slice(
                                    uj,
                                    tap,
                                    &mut out.row_mut(k)[ch * order..(ch + 1) * order],
                                );
                            }
                        }
                    }
                }
            }
            ScanPath::Fft => {
                let plan = self.plan(t);
                let spectra = plan.spectra();
                for ch in 0..channels {
                    spectra.convolve_into(&u.col(ch), &mut out, ch * order);
                }
            }
        }
        out
    }

    /// Vector-Jacobian product of [`Self::forward`]: maps an output adjoint
    /// `T x (c·order)` back to an input adjoint `T x c`. `Ā` and `B̄` are
    /// constants and receive nothing.
    pub fn adjoint(&self, g: &Matrix, path: ScanPath) -> Matrix {
        let order = self.order();
        let t = g.rows();
        let channels = g.cols() / order;
        let mut grad = Matrix::zeros(t, channels);
        if t == 0 {
            return grad;
        }
        let b_bar = self.system.b_bar.as_slice();
        match path {
            ScanPath::Sequential => {
                let mut lambda = vec![0.0; order];
                for ch in 0..channels {
                    lambda.fill(0.0);
                    for k in (0..t).rev() {
                        let mut next = g.row(k)[ch * order..(ch + 1) * order].to_vec();
                        self.system.a_bar.t_matvec_acc(&lambda, &mut next);
                        lambda = next;
                        grad[(k, ch)] = crate::linalg::dot(b_bar, &lambda);
                    }
                }
            }
            ScanPath::Direct => {
                let plan = self.plan(t);
                for ch in 0..channels {
                    for j in 0..t {
                        let mut s = 0.0;
                        for k in j..t {
                            s += crate::linalg::dot(
                                plan.kernel.tap(k - j),
                                &g.row(k)[ch * order..(ch + 1) * order],
                            );
                        }
                        grad[(j, ch)] = s;
                    }
                }
            }
            ScanPath::Fft => {
                let plan = self.plan(t);
                let spectra = plan.spectra();
                let mut col = vec![0.0; t];
                for ch in 0..channels {
                    col.fill(0.0);
                    spectra.correlate_acc(g, ch * order, &mut col);
                    for k in 0..t {
                        grad[(k, ch)] = col[k];
                    }
                }
            }
        }
        grad
    }
}

/// Max-norm relative deviation `max|a-b| / max|b|` (absolute when `b` is zero).
pub fn max_relative_error(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a.sub(b).max_abs();
    let scale = b.max_abs();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
