//! Leaky integrate-and-fire neurons, surrogate derivatives, spike coding and
//! the spiking delayed memory layer.
//!
//! In the spiking layer both branch inputs are binary,
//! `u[k] = Θ(W_u x[k] − θ)` and `v[k] = Θ(W_v x[k] − θ)`; the memory, gates
//! and delay combination are those of the PDMU; and a leaky
//! integrate-and-fire neuron per output unit integrates the current
//! `W_x x[k] + W_m h[k]` and fires at `θ` with a hard reset. No branch or
//! output biases are used.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::kaiming_uniform;
use crate::layer::{check_input, LayerConfig, Mode, Parameters};
use crate::linalg::Matrix;
use crate::lmu::{scan_path, Drive};
use crate::pdmu::{PdmuLayerParams, PdmuStepper, Variant};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifConfig {
    pub threshold: f64,
    /// Multiplier on the carried potential; 1.0 is a pure integrator.
    pub leak: f64,
    /// Half-width of the triangular surrogate derivative.
    pub surrogate_width: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            leak: 1.0,
            surrogate_width: 1.0,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::invalid(format!(
                "spike threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !(self.leak > 0.0 && self.leak <= 1.0) {
            return Err(Error::invalid(format!(
                "leak must lie in (0, 1], got {}",
                self.leak
            )));
        }
        if !(self.surrogate_width.is_finite() && self.surrogate_width > 0.0) {
            return Err(Error::invalid(format!(
                "surrogate width must be positive, got {}",
                self.surrogate_width
            )));
        }
        Ok(())
    }
}

/// One neuron update. Returns the new potential and whether it spiked.
/// A potential exactly at threshold fires; firing resets to zero.
#[inline]
pub fn lif_step(potential: f64, input: f64, cfg: &LifConfig) -> (f64, bool) {
    let p = cfg.leak * potential + input;
    if p >= cfg.threshold {
        (0.0, true)
    } else {
        (p, false)
    }
}

/// Triangular pseudo-derivative of the step function at `x`.
#[inline]
pub fn surrogate_grad(x: f64, width: f64) -> f64 {
    (1.0 - x.abs() / width).max(0.0) / width
}

/// Piecewise-quadratic step whose derivative is [`surrogate_grad`].
#[inline]
pub fn smooth_step(x: f64, width: f64) -> f64 {
    if x <= -width {
        0.0
    } else if x < 0.0 {
        let r = x + width;
        r * r / (2.0 * width * width)
    } else if x < width {
        let r = width - x;
        1.0 - r * r / (2.0 * width * width)
    } else {
        1.0
    }
}

pub fn is_binary(x: &Matrix) -> bool {
    x.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
}

/// Linear projection followed by one LIF neuron per output channel.
#[derive(Debug, Clone)]
pub struct SpikeEncoder {
    /// `channels x input_dim`
    pub w_e: Matrix,
    /// `1 x channels`
    pub b_e: Matrix,
    pub lif: LifConfig,
}

impl SpikeEncoder {
    pub fn new(
        input_dim: usize,
        channels: usize,
        lif: LifConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        lif.validate()?;
        if input_dim == 0 || channels == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        Ok(Self {
            w_e: kaiming_uniform(channels, input_dim, input_dim, rng),
            b_e: kaiming_uniform(1, channels, input_dim, rng),
            lif,
        })
    }

    pub fn channels(&self) -> usize {
        self.w_e.rows()
    }

    pub fn record(&self, tape: &mut Tape, x: Var, prefix: &str) -> Var {
        let w = tape.param(format!("{prefix}w_e"), &self.w_e);
        let b = tape.param(format!("{prefix}b_e"), &self.b_e);
        let current = tape.linear(x, w, Some(b));
        tape.lif(current, self.lif)
    }

    pub fn stepper(&self) -> EncoderStepper<'_> {
        EncoderStepper {
            encoder: self,
            potential: vec![0.0; self.channels()],
            spikes: vec![0.0; self.channels()],
        }
    }
}

impl Parameters for SpikeEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w_e", &self.w_e);
        f("b_e", &self.b_e);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w_e", &mut self.w_e);
        f("b_e", &mut self.b_e);
    }
}

#[derive(Debug, Clone)]
pub struct EncoderStepper<'a> {
    encoder: &'a SpikeEncoder,
    potential: Vec<f64>,
    spikes: Vec<f64>,
}

impl EncoderStepper<'_> {
    pub fn step(&mut self, x: &[f64]) -> &[f64] {
        let enc = self.encoder;
        for c in 0..self.potential.len() {
            let current = crate::linalg::dot(enc.w_e.row(c), x) + enc.b_e.as_slice()[c];
            let (p, s) = lif_step(self.potential[c], current, &enc.lif);
            self.potential[c] = p;
            self.spikes[c] = if s { 1.0 } else { 0.0 };
        }
        &self.spikes
    }
}

/// Encodes a real-valued `T x M` sequence into a `T x channels` spike train.
pub fn spike_encode(x: &Matrix, encoder: &SpikeEncoder) -> Result<Matrix> {
    check_input(x, encoder.w_e.cols())?;
    let mut stepper = encoder.stepper();
    let mut out = Matrix::zeros(x.rows(), encoder.channels());
    for k in 0..x.rows() {
        out.row_mut(k).copy_from_slice(stepper.step(x.row(k)));
    }
    Ok(out)
}

/// Delayed memory layer with binary inputs and outputs.
#[derive(Debug, Clone)]
pub struct SpikingDmuParams {
    /// Shapes, frozen systems and weights; its biases stay zero and unused.
    pub core: PdmuLayerParams,
    /// `threshold` applies to both branches and the output neuron; `leak`
    /// only to the output neuron.
    pub lif: LifConfig,
}

/// Tape handles of one spiking layer.
#[derive(Debug, Clone, Copy)]
pub struct SpikingVars {
    pub output: Var,
    pub memory: Var,
    pub gates: Var,
    pub branch_u: Var,
    pub branch_v: Var,
}

/// Result of [`spiking_dmu_forward`].
#[derive(Debug, Clone)]
pub struct SpikingOutput {
    pub spikes: Matrix,
    /// Combined memory `h`.
    pub memory: Matrix,
    pub branch_u: Matrix,
    pub branch_v: Matrix,
    pub synops: SynopCounter,
}

impl SpikingDmuParams {
    pub fn new(cfg: &LayerConfig, lif: LifConfig, rng: &mut impl Rng) -> Result<Self> {
        let core = PdmuLayerParams::new(cfg, Variant::Plain, rng)?;
        Self::from_core(core, lif)
    }

    pub fn from_core(mut core: PdmuLayerParams, lif: LifConfig) -> Result<Self> {
        lif.validate()?;
        if !core.variant.is_causal() {
            return Err(Error::UnsupportedVariant(
                "spiking layers must be causal".into(),
            ));
        }
        core.core.b_u.fill(0.0);
        core.core.b_o.fill(0.0);
        core.forward_gate.b_v.fill(0.0);
        Ok(Self { core, lif })
    }

    pub fn validate(&self) -> Result<()> {
        self.lif.validate()?;
        self.core.validate()
    }

    pub fn hidden_dim(&self) -> usize {
        self.core.core.hidden_dim
    }

    pub fn record(&self, tape: &mut Tape, x: Var, prefix: &str, mode: Mode) -> SpikingVars {
        let lmu = &self.core.core;
        let len = tape.value(x).rows();
        let (theta, width) = (self.lif.threshold, self.lif.surrogate_width);

        let w_u = tape.param(format!("{prefix}w_u"), &lmu.w_u);
        let pre_u = tape.linear(x, w_u, None);
        let branch_u = tape.threshold(pre_u, theta, width);
        let m = tape.scan(branch_u, lmu.memory(), scan_path(lmu.memory(), mode, len));

        let w_v = tape.param(format!("{prefix}w_v"), &self.core.forward_gate.w_v);
        let pre_v = tape.linear(x, w_v, None);
        let branch_v = tape.threshold(pre_v, theta, width);
        let gate = self.core.gate_engine();
        let logits = tape.scan(branch_v, gate, scan_path(gate, mode, len));
        let mut gates = tape.softmax_rows(logits);
        if self.core.variant == Variant::Efficient {
            gates = tape.efficient_mask(logits, gates);
        }
        let h = tape.combine_delayed(m, gates, None);

        let w_x = tape.param(format!("{prefix}w_x"), &lmu.w_x);
        let w_m = tape.param(format!("{prefix}w_m"), &lmu.w_m);
        let direct = tape.linear(x, w_x, None);
        let recalled = tape.linear(h, w_m, None);
        let current = tape.add(direct, recalled);
        let output = tape.lif(current, self.lif);
        SpikingVars {
            output,
            memory: h,
            gates,
            branch_u,
            branch_v,
        }
    }

    /// Accumulates triggered by one forward pass: each input spike reaches
    /// the `c + 1 + N` rows of `W_u`, `W_v`, `W_x`; each branch spike feeds
    /// the `q` or `n` entries of `B̄` or `Q̄`.
    pub fn synops(&self, input: &Matrix, branch_u: &Matrix, branch_v: &Matrix) -> SynopCounter {
        let lmu = &self.core.core;
        let mut counter = SynopCounter::default();
        counter.record(input, lmu.memory_channels + 1 + lmu.hidden_dim);
        counter.record(branch_u, lmu.memory_order);
        counter.record(branch_v, self.core.delays);
        counter
    }

    pub fn stepper(&self) -> Result<SpikingStepper<'_>> {
        Ok(SpikingStepper {
            inner: PdmuStepper::with_drive(&self.core, Drive::Spike(self.lif.threshold))?,
            lif: self.lif,
            potential: vec![0.0; self.hidden_dim()],
            spikes: vec![0.0; self.hidden_dim()],
        })
    }
}

impl Parameters for SpikingDmuParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w_u", &self.core.core.w_u);
        f("w_v", &self.core.forward_gate.w_v);
        f("w_x", &self.core.core.w_x);
        f("w_m", &self.core.core.w_m);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w_u", &mut self.core.core.w_u);
        f("w_v", &mut self.core.forward_gate.w_v);
        f("w_x", &mut self.core.core.w_x);
        f("w_m", &mut self.core.core.w_m);
    }
}

/// Runs a spiking layer with the step-by-step recurrence.
pub fn spiking_dmu_forward(params: &SpikingDmuParams, spikes_in: &Matrix) -> Result<SpikingOutput> {
    spiking_dmu_forward_with(params, spikes_in, Mode::Sequential)
}

pub fn spiking_dmu_forward_with(
    params: &SpikingDmuParams,
    spikes_in: &Matrix,
    mode: Mode,
) -> Result<SpikingOutput> {
    params.validate()?;
    check_input(spikes_in, params.core.core.input_dim)?;
    if !is_binary(spikes_in) {
        return Err(Error::invalid("spiking layer input must be binary"));
    }
    let mut tape = Tape::new();
    let x = tape.input(spikes_in.clone());
    let vars = params.record(&mut tape, x, "", mode);
    let branch_u = tape.take_value(vars.branch_u);
    let branch_v = tape.take_value(vars.branch_v);
    let synops = params.synops(spikes_in, &branch_u, &branch_v);
    Ok(SpikingOutput {
        spikes: tape.take_value(vars.output),
        memory: tape.take_value(vars.memory),
        branch_u,
        branch_v,
        synops,
    })
}

/// Streaming evaluation of a spiking layer.
#[derive(Debug, Clone)]
pub struct SpikingStepper<'a> {
    inner: PdmuStepper<'a>,
    lif: LifConfig,
    potential: Vec<f64>,
    spikes: Vec<f64>,
}

impl SpikingStepper<'_> {
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn combined(&self) -> &[f64] {
        self.inner.combined()
    }

    pub fn step(&mut self, x: &[f64]) -> &[f64] {
        let current = self.inner.step(x);
        for (j, &i) in current.iter().enumerate() {
            let (p, s) = lif_step(self.potential[j], i, &self.lif);
            self.potential[j] = p;
            self.spikes[j] = if s { 1.0 } else { 0.0 };
        }
        &self.spikes
    }
}

/// Counts synaptic operations: every spike in `spikes` (T x in) costs one
/// accumulate per outgoing connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SynopCounter {
    pub spikes: u64,
    pub synops: u64,
}

impl SynopCounter {
    pub fn record(&mut self, spikes: &Matrix, fan_out: usize) {
        let n = spikes.as_slice().iter().filter(|&&s| s != 0.0).count() as u64;
        self.spikes += n;
        self.synops += n * fan_out as u64;
    }

    pub fn merge(&mut self, other: &SynopCounter) {
        self.spikes += other.spikes;
        self.synops += other.synops;
    }
}
