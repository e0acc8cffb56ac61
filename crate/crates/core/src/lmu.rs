//! Legendre Memory Unit layer without hidden-to-hidden recurrence.
//!
//! ```text
//! u[k] = f_u(W_u x[k] + b_u)                 (one scalar per memory channel)
//! m[k] = Ā m[k-1] + B̄ u[k]                  (frozen Legendre system)
//! o[k] = f_o(W_x x[k] + W_m m[k] + b_o)
//! ```

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::kaiming_uniform;
use crate::layer::{check_input, check_shape, legendre_memory, LayerConfig, Mode, Parameters};
use crate::linalg::Matrix;
use crate::ssm::{DiscreteSystem, ScanEngine, ScanPath};
use crate::tape::{Activation, Tape, Var};

#[derive(Debug, Clone)]
pub struct LmuLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub memory_order: usize,
    pub memory_channels: usize,
    pub theta: f64,
    /// `channels x input_dim`
    pub w_u: Matrix,
    /// `1 x channels`
    pub b_u: Matrix,
    /// `hidden x input_dim`
    pub w_x: Matrix,
    /// `hidden x (channels·order)`
    pub w_m: Matrix,
    /// `1 x hidden`
    pub b_o: Matrix,
    pub f_u: Activation,
    pub f_o: Activation,
    memory: Arc<ScanEngine>,
}

/// Tape handles produced by one layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub output: Var,
    /// Memory seen by the readout (`m` for the LMU, `h` for gated layers).
    pub memory: Var,
    /// Forward and optional backward gate sequences of gated layers.
    pub gates: Option<(Var, Option<Var>)>,
}

pub(crate) fn scan_path(engine: &ScanEngine, mode: Mode, len: usize) -> ScanPath {
    match mode {
        Mode::Sequential => ScanPath::Sequential,
        Mode::Parallel => engine.parallel_path(len),
    }
}

impl LmuLayerParams {
    /// Kaiming-uniform weights and biases, fan-in taken from each map's input.
    pub fn new(cfg: &LayerConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut layer = Self::zeros(cfg)?;
        let m = cfg.input_dim;
        let width = layer.memory_width();
        layer.w_u = kaiming_uniform(cfg.memory_channels, m, m, rng);
        layer.b_u = kaiming_uniform(1, cfg.memory_channels, m, rng);
        layer.w_x = kaiming_uniform(cfg.hidden_dim, m, m, rng);
        layer.w_m = kaiming_uniform(cfg.hidden_dim, width, width, rng);
        layer.b_o = kaiming_uniform(1, cfg.hidden_dim, m + width, rng);
        Ok(layer)
    }

    /// Every trainable entry zero.
    pub fn zeros(cfg: &LayerConfig) -> Result<Self> {
        cfg.validate()?;
        let q = cfg.order();
        let c = cfg.memory_channels;
        let memory = legendre_memory(q, cfg.memory_theta(), cfg.dt, cfg.fft_threshold)?;
        Ok(Self {
            input_dim: cfg.input_dim,
            hidden_dim: cfg.hidden_dim,
            memory_order: q,
            memory_channels: c,
            theta: cfg.memory_theta(),
            w_u: Matrix::zeros(c, cfg.input_dim),
            b_u: Matrix::zeros(1, c),
            w_x: Matrix::zeros(cfg.hidden_dim, cfg.input_dim),
            w_m: Matrix::zeros(cfg.hidden_dim, c * q),
            b_o: Matrix::zeros(1, cfg.hidden_dim),
            f_u: cfg.input_activation,
            f_o: cfg.output_activation,
            memory,
        })
    }

    pub fn memory(&self) -> &Arc<ScanEngine> {
        &self.memory
    }

    pub fn memory_system(&self) -> &DiscreteSystem {
        self.memory.system()
    }

    pub fn set_fft_threshold(&mut self, threshold: usize) {
        let mut engine = (*self.memory).clone();
        engine.set_config(crate::ssm::ScanConfig {
            fft_threshold: threshold,
        });
        self.memory = Arc::new(engine);
    }

    /// Columns of the memory sequence: `channels * order`.
    pub fn memory_width(&self) -> usize {
        self.memory_channels * self.memory_order
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n, c) = (self.input_dim, self.hidden_dim, self.memory_channels);
        check_shape("w_u", &self.w_u, c, m)?;
        check_shape("b_u", &self.b_u, 1, c)?;
        check_shape("w_x", &self.w_x, n, m)?;
        check_shape("w_m", &self.w_m, n, self.memory_width())?;
        check_shape("b_o", &self.b_o, 1, n)?;
        if self.memory.order() != self.memory_order {
            return Err(Error::invalid(
                "memory system order does not match memory_order",
            ));
        }
        Ok(())
    }

    /// Records `u` and the memory scan; returns the memory sequence.
    pub(crate) fn record_memory(&self, tape: &mut Tape, x: Var, prefix: &str, mode: Mode) -> Var {
        let w_u = tape.param(format!("{prefix}w_u"), &self.w_u);
        let b_u = tape.param(format!("{prefix}b_u"), &self.b_u);
        let pre = tape.linear(x, w_u, Some(b_u));
        let u = tape.activate(pre, self.f_u);
        let path = scan_path(&self.memory, mode, tape.value(x).rows());
        tape.scan(u, &self.memory, path)
    }

    /// Records `f_o(W_x x + W_m memory + b_o)`.
    pub(crate) fn record_readout(&self, tape: &mut Tape, x: Var, memory: Var, prefix: &str) -> Var {
        let w_x = tape.param(format!("{prefix}w_x"), &self.w_x);
        let w_m = tape.param(format!("{prefix}w_m"), &self.w_m);
        let b_o = tape.param(format!("{prefix}b_o"), &self.b_o);
        let direct = tape.linear(x, w_x, None);
        let recalled = tape.linear(memory, w_m, Some(b_o));
        let pre = tape.add(direct, recalled);
        tape.activate(pre, self.f_o)
    }

    pub fn record(&self, tape: &mut Tape, x: Var, prefix: &str, mode: Mode) -> LayerVars {
        let memory = self.record_memory(tape, x, prefix, mode);
        let output = self.record_readout(tape, x, memory, prefix);
        LayerVars {
            output,
            memory,
            gates: None,
        }
    }

    pub fn stepper(&self) -> LmuStepper<'_> {
        LmuStepper::new(self)
    }

    /// Scalars carried between steps in sequential mode: the readout plus the memory.
    pub fn runtime_state_count(&self) -> usize {
        self.hidden_dim + self.memory_width()
    }
}

impl Parameters for LmuLayerParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w_u", &self.w_u);
        f("b_u", &self.b_u);
        f("w_x", &self.w_x);
        f("w_m", &self.w_m);
        f("b_o", &self.b_o);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w_u", &mut self.w_u);
        f("b_u", &mut self.b_u);
        f("w_x", &mut self.w_x);
        f("w_m", &mut self.w_m);
        f("b_o", &mut self.b_o);
    }
}

/// Runs the layer over a whole sequence. Returns `(o, m)`.
pub fn lmu_forward(params: &LmuLayerParams, x: &Matrix, mode: Mode) -> Result<(Matrix, Matrix)> {
    params.validate()?;
    check_input(x, params.input_dim)?;
    match mode {
        Mode::Parallel => {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let vars = params.record(&mut tape, xv, "", mode);
            let m = tape.take_value(vars.memory);
            Ok((tape.take_value(vars.output), m))
        }
        Mode::Sequential => {
            let mut stepper = params.stepper();
            let mut o = Matrix::zeros(x.rows(), params.hidden_dim);
            let mut m = Matrix::zeros(x.rows(), params.memory_width());
            for k in 0..x.rows() {
                o.row_mut(k).copy_from_slice(stepper.step(x.row(k)));
                m.row_mut(k).copy_from_slice(stepper.memory());
            }
            Ok((o, m))
        }
    }
}

/// Streaming evaluation with state `m` and the last readout.
#[derive(Debug, Clone)]
pub struct LmuStepper<'a> {
    layer: &'a LmuLayerParams,
    drive: Drive,
    memory: Vec<f64>,
    output: Vec<f64>,
    scratch: Vec<f64>,
}

/// Nonlinearity between an input projection and a state-space input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Drive {
    Smooth(Activation),
    /// Binary `Θ(pre - threshold)`.
    Spike(f64),
}

impl Drive {
    #[inline]
    pub(crate) fn apply(self, pre: f64) -> f64 {
        match self {
            Drive::Smooth(act) => act.apply(pre),
            Drive::Spike(threshold) => {
                if pre >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl<'a> LmuStepper<'a> {
    pub fn new(layer: &'a LmuLayerParams) -> Self {
        Self::with_drive(layer, Drive::Smooth(layer.f_u))
    }

    pub(crate) fn with_drive(layer: &'a LmuLayerParams, drive: Drive) -> Self {
        Self {
            layer,
            drive,
            memory: vec![0.0; layer.memory_width()],
            output: vec![0.0; layer.hidden_dim],
            scratch: vec![0.0; layer.memory_order],
        }
    }

    pub fn reset(&mut self) {
        self.memory.fill(0.0);
        self.output.fill(0.0);
    }

    pub fn memory(&self) -> &[f64] {
        &self.memory
    }

    pub fn state_len(&self) -> usize {
        self.memory.len() + self.output.len()
    }

    /// Advances the memory by one input; does not compute the readout.
    pub(crate) fn advance_memory(&mut self, x: &[f64]) {
        let layer = self.layer;
        let q = layer.memory_order;
        let sys = layer.memory.system();
        for ch in 0..layer.memory_channels {
            let pre = crate::linalg::dot(layer.w_u.row(ch), x) + layer.b_u.as_slice()[ch];
            let u = self.drive.apply(pre);
            sys.step(&mut self.memory[ch * q..(ch + 1) * q], u, &mut self.scratch);
        }
    }

    pub fn step(&mut self, x: &[f64]) -> &[f64] {
        self.advance_memory(x);
        let memory = std::mem::take(&mut self.memory);
        readout_into(self.layer, x, &memory, self.layer.f_o, &mut self.output);
        self.memory = memory;
        &self.output
    }
}

pub(crate) fn readout_into(
    layer: &LmuLayerParams,
    x: &[f64],
    memory: &[f64],
    act: Activation,
    out: &mut [f64],
) {
    out.copy_from_slice(layer.b_o.as_slice());
    for (r, o) in out.iter_mut().enumerate() {
        *o +=
            crate::linalg::dot(layer.w_x.row(r), x) + crate::linalg::dot(layer.w_m.row(r), memory);
        *o = act.apply(*o);
    }
}

/// Legendre polynomials `P_0..P_{count-1}` at `x`.
pub fn legendre(count: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(count);
    for i in 0..count {
        let v = match i {
            0 => 1.0,
            1 => x,
            _ => {
                let n = (i - 1) as f64;
                ((2.0 * n + 1.0) * x * p[i - 1] - n * p[i - 2]) / (n + 1.0)
            }
        };
        p.push(v);
    }
    p
}

/// Estimate of the memory input `fraction * theta` in the past:
/// `Σ_i P_i(2·fraction − 1) m_i`.
pub fn window_reconstruct(memory: &[f64], fraction: f64) -> f64 {
    let p = legendre(memory.len(), 2.0 * fraction - 1.0);
    crate::linalg::dot(&p, memory)
}

/// Reconstructs the input delayed by `fraction * theta` at every step of a
/// memory sequence (`T x order`).
pub fn window_reconstruct_sequence(memory: &Matrix, fraction: f64) -> Vec<f64> {
    let p = legendre(memory.cols(), 2.0 * fraction - 1.0);
    let mut out = vec![0.0; memory.rows()];
    for (k, v) in out.iter_mut().enumerate() {
        *v = crate::linalg::dot(&p, memory.row(k));
    }
    out
}
