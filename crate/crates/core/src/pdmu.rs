//! Parallel Delayed Memory Unit: an LMU whose memory is mixed with gated
//! copies of its recent past before the readout.
//!
//! ```text
//! v[k] = f_u(W_v x[k] + b_v)
//! d[k] = P̄ d[k-1] + Q̄ v[k]                  (frozen order-n Legendre system)
//! g[k] = softmax(d[k])
//! h[k] = m[k] + Σ_{j=1..n} g_j[k-j] m[k-j]
//! o[k] = f_o(W_m h[k] + W_x x[k] + b_o)
//! ```
//!
//! The gate vector emitted at step `i` routes `m[i]` forward to steps
//! `i+1..=i+n`. The bidirectional variant adds a second gate system, with its
//! own input weights, run over the time-reversed input; its gates route
//! `m[i]` back to `i-1..=i-n`. The efficient variant keeps only the largest
//! gate of every row.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::kaiming_uniform;
use crate::layer::{check_input, check_shape, legendre_memory, LayerConfig, Mode, Parameters};
use crate::linalg::{axpy_slice, dot, Matrix};
use crate::lmu::{readout_into, scan_path, Drive, LayerVars, LmuLayerParams, LmuStepper};
use crate::ssm::ScanEngine;
use crate::tape::{argmax, argmax_mask, combine_values, softmax_in_place, Activation, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Variant {
    #[default]
    Plain,
    Bidirectional,
    Efficient,
}

impl Variant {
    pub fn is_causal(self) -> bool {
        self != Variant::Bidirectional
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Plain => "plain",
            Variant::Bidirectional => "bidirectional",
            Variant::Efficient => "efficient",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "bidirectional" => Ok(Variant::Bidirectional),
            "efficient" => Ok(Variant::Efficient),
            other => Err(Error::UnsupportedVariant(other.to_string())),
        }
    }
}

/// Input map of a gate system.
#[derive(Debug, Clone)]
pub struct GateInput {
    /// `1 x input_dim`
    pub w_v: Matrix,
    /// `1 x 1`
    pub b_v: Matrix,
}

#[derive(Debug, Clone)]
pub struct PdmuLayerParams {
    pub core: LmuLayerParams,
    pub delays: usize,
    pub gate_theta: f64,
    pub variant: Variant,
    pub forward_gate: GateInput,
    /// Present only for the bidirectional variant.
    pub backward_gate: Option<GateInput>,
    gate: Arc<ScanEngine>,
}

/// Gate sequences of one layer, each `T x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSequences {
    pub forward: Matrix,
    pub backward: Option<Matrix>,
}

impl PdmuLayerParams {
    pub fn new(cfg: &LayerConfig, variant: Variant, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate_gated()?;
        let core = LmuLayerParams::new(cfg, rng)?;
        let m = cfg.input_dim;
        let gate_input = |rng: &mut _| GateInput {
            w_v: kaiming_uniform(1, m, m, rng),
            b_v: kaiming_uniform(1, 1, m, rng),
        };
        let forward_gate = gate_input(rng);
        let backward_gate = (variant == Variant::Bidirectional).then(|| gate_input(rng));
        Self::assemble(cfg, variant, core, forward_gate, backward_gate)
    }

    pub fn zeros(cfg: &LayerConfig, variant: Variant) -> Result<Self> {
        cfg.validate_gated()?;
        let core = LmuLayerParams::zeros(cfg)?;
        let zero = || GateInput {
            w_v: Matrix::zeros(1, cfg.input_dim),
            b_v: Matrix::zeros(1, 1),
        };
        let backward = (variant == Variant::Bidirectional).then(zero);
        Self::assemble(cfg, variant, core, zero(), backward)
    }

    fn assemble(
        cfg: &LayerConfig,
        variant: Variant,
        core: LmuLayerParams,
        forward_gate: GateInput,
        backward_gate: Option<GateInput>,
    ) -> Result<Self> {
        let gate = legendre_memory(cfg.delays, cfg.gate_window(), cfg.dt, cfg.fft_threshold)?;
        Ok(Self {
            core,
            delays: cfg.delays,
            gate_theta: cfg.gate_window(),
            variant,
            forward_gate,
            backward_gate,
            gate,
        })
    }

    pub fn gate_engine(&self) -> &Arc<ScanEngine> {
        &self.gate
    }

    pub fn set_fft_threshold(&mut self, threshold: usize) {
        self.core.set_fft_threshold(threshold);
        let mut engine = (*self.gate).clone();
        engine.set_config(crate::ssm::ScanConfig {
            fft_threshold: threshold,
        });
        self.gate = Arc::new(engine);
    }

    pub fn validate(&self) -> Result<()> {
        self.core.validate()?;
        let m = self.core.input_dim;
        check_shape("w_v", &self.forward_gate.w_v, 1, m)?;
        check_shape("b_v", &self.forward_gate.b_v, 1, 1)?;
        match (&self.backward_gate, self.variant) {
            (Some(g), Variant::Bidirectional) => {
                check_shape("w_vb", &g.w_v, 1, m)?;
                check_shape("b_vb", &g.b_v, 1, 1)?;
            }
            (None, Variant::Bidirectional) => {
                return Err(Error::invalid(
                    "bidirectional layer is missing its backward gate input",
                ))
            }
            (Some(_), _) => {
                return Err(Error::invalid(
                    "only bidirectional layers carry a backward gate input",
                ))
            }
            (None, _) => {}
        }
        if self.gate.order() != self.delays {
            return Err(Error::invalid(
                "gate system order does not match the delay count",
            ));
        }
        Ok(())
    }

    fn check_mode(&self, mode: Mode) -> Result<()> {
        if mode == Mode::Sequential && !self.variant.is_causal() {
            return Err(Error::UnsupportedMode(
                "the bidirectional variant looks ahead and has no sequential form".into(),
            ));
        }
        Ok(())
    }

    /// Records gate logits `d` for one direction.
    fn record_logits(
        &self,
        tape: &mut Tape,
        x: Var,
        input: &GateInput,
        names: (&str, &str),
        mode: Mode,
    ) -> Var {
        let w = tape.param(names.0, &input.w_v);
        let b = tape.param(names.1, &input.b_v);
        let pre = tape.linear(x, w, Some(b));
        let v = tape.activate(pre, self.core.f_u);
        let path = scan_path(&self.gate, mode, tape.value(x).rows());
        tape.scan(v, &self.gate, path)
    }

    /// Records the (possibly masked) gate sequences.
    pub fn record_gates(
        &self,
        tape: &mut Tape,
        x: Var,
        prefix: &str,
        mode: Mode,
    ) -> Result<(Var, Option<Var>)> {
        self.check_mode(mode)?;
        let (wn, bn) = (format!("{prefix}w_v"), format!("{prefix}b_v"));
        let logits = self.record_logits(tape, x, &self.forward_gate, (&wn, &bn), mode);
        let mut forward = tape.softmax_rows(logits);
        if self.variant == Variant::Efficient {
            forward = tape.efficient_mask(logits, forward);
        }
        let backward = match &self.backward_gate {
            Some(input) => {
                let (wn, bn) = (format!("{prefix}w_vb"), format!("{prefix}b_vb"));
                let reversed = tape.reverse_time(x);
                let logits = self.record_logits(tape, reversed, input, (&wn, &bn), mode);
                let logits = tape.reverse_time(logits);
                Some(tape.softmax_rows(logits))
            }
            None => None,
        };
        Ok((forward, backward))
    }

    pub fn record(&self, tape: &mut Tape, x: Var, prefix: &str, mode: Mode) -> Result<LayerVars> {
        let (forward, backward) = self.record_gates(tape, x, prefix, mode)?;
        let m = self.core.record_memory(tape, x, prefix, mode);
        let h = tape.combine_delayed(m, forward, backward);
        let output = self.core.record_readout(tape, x, h, prefix);
        Ok(LayerVars {
            output,
            memory: h,
            gates: Some((forward, backward)),
        })
    }

    pub fn stepper(&self) -> Result<PdmuStepper<'_>> {
        PdmuStepper::new(self)
    }

    /// Scalars carried between steps in sequential mode: readout, memory and
    /// gate state. The pending-contribution ring (`n` vectors of the memory
    /// width) is bookkeeping for the delay line and not counted here.
    pub fn runtime_state_count(&self) -> usize {
        self.core.hidden_dim + self.core.memory_width() + self.delays
    }

    /// Scalars held by the pending-contribution ring.
    pub fn delay_ring_len(&self) -> usize {
        self.delays * self.core.memory_width()
    }
}

impl Parameters for PdmuLayerParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w_u", &self.core.w_u);
        f("b_u", &self.core.b_u);
        f("w_v", &self.forward_gate.w_v);
        f("b_v", &self.forward_gate.b_v);
        if let Some(g) = &self.backward_gate {
            f("w_vb", &g.w_v);
            f("b_vb", &g.b_v);
        }
        f("w_x", &self.core.w_x);
        f("w_m", &self.core.w_m);
        f("b_o", &self.core.b_o);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w_u", &mut self.core.w_u);
        f("b_u", &mut self.core.b_u);
        f("w_v", &mut self.forward_gate.w_v);
        f("b_v", &mut self.forward_gate.b_v);
        if let Some(g) = &mut self.backward_gate {
            f("w_vb", &mut g.w_v);
            f("b_vb", &mut g.b_v);
        }
        f("w_x", &mut self.core.w_x);
        f("w_m", &mut self.core.w_m);
        f("b_o", &mut self.core.b_o);
    }
}

/// Softmax gates of the forward direction, before any masking.
pub fn delay_gates(params: &PdmuLayerParams, x: &Matrix, mode: Mode) -> Result<Matrix> {
    params.validate()?;
    check_input(x, params.core.input_dim)?;
    match mode {
        Mode::Parallel => {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let logits =
                params.record_logits(&mut tape, xv, &params.forward_gate, ("w_v", "b_v"), mode);
            let gates = tape.softmax_rows(logits);
            Ok(tape.take_value(gates))
        }
        Mode::Sequential => {
            let sys = params.gate.system();
            let n = params.delays;
            let mut d = vec![0.0; n];
            let mut scratch = vec![0.0; n];
            let mut out = Matrix::zeros(x.rows(), n);
            for k in 0..x.rows() {
                let v = gate_drive(
                    &params.forward_gate,
                    Drive::Smooth(params.core.f_u),
                    x.row(k),
                );
                sys.step(&mut d, v, &mut scratch);
                let row = out.row_mut(k);
                row.copy_from_slice(&d);
                softmax_in_place(row);
            }
            Ok(out)
        }
    }
}

/// Gate sequences exactly as used by the layer (masked for the efficient variant).
pub fn gate_sequences(params: &PdmuLayerParams, x: &Matrix) -> Result<GateSequences> {
    params.validate()?;
    check_input(x, params.core.input_dim)?;
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let (f, b) = params.record_gates(&mut tape, xv, "", Mode::Parallel)?;
    let backward = b.map(|b| tape.take_value(b));
    Ok(GateSequences {
        forward: tape.take_value(f),
        backward,
    })
}

fn gate_drive(input: &GateInput, drive: Drive, x: &[f64]) -> f64 {
    drive.apply(dot(input.w_v.as_slice(), x) + input.b_v.as_slice()[0])
}

/// One-hot argmax of each gate row (ties to the lowest offset) and the
/// gates multiplied by it.
pub fn efficient_mask(gates: &Matrix) -> (Matrix, Matrix) {
    let mask = argmax_mask(gates);
    let mut masked = gates.clone();
    for (g, m) in masked.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        *g *= m;
    }
    (mask, masked)
}

/// Mixes delayed memories into the current one. `forward` (and `backward`,
/// required for the bidirectional variant) are `T x n` gate sequences; the
/// efficient variant masks `forward` first.
pub fn combine_delayed(
    m: &Matrix,
    forward: &Matrix,
    backward: Option<&Matrix>,
    variant: Variant,
) -> Result<Matrix> {
    if forward.rows() != m.rows() {
        return Err(Error::invalid(format!(
            "gates have {} rows, memory has {}",
            forward.rows(),
            m.rows()
        )));
    }
    match (variant, backward) {
        (Variant::Bidirectional, None) => {
            return Err(Error::invalid(
                "bidirectional combination needs backward gates",
            ));
        }
        (Variant::Bidirectional, Some(b)) if b.shape() != forward.shape() => {
            return Err(Error::invalid(
                "backward gates must match the forward gate shape",
            ));
        }
        (Variant::Plain | Variant::Efficient, Some(_)) => {
            return Err(Error::invalid(
                "backward gates are only used by the bidirectional variant",
            ));
        }
        _ => {}
    }
    if m.rows() == 0 {
        return Ok(m.clone());
    }
    Ok(match variant {
        Variant::Efficient => combine_values(m, &efficient_mask(forward).1, None),
        _ => combine_values(m, forward, backward),
    })
}

/// Banded view of the gate matrix `D̂`: entry `(i, k)` weighs memory `i` in
/// the combined state `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMatrix {
    len: usize,
    delays: usize,
    /// Row `i`, column `j-1` holds entry `(i, i+j)`.
    upper: Matrix,
    /// Row `i`, column `j-1` holds entry `(i, i-j)`.
    lower: Option<Matrix>,
}

impl GateMatrix {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn delays(&self) -> usize {
        self.delays
    }

    pub fn upper_band(&self) -> &Matrix {
        &self.upper
    }

    pub fn lower_band(&self) -> Option<&Matrix> {
        self.lower.as_ref()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        if i >= self.len || k >= self.len {
            return 0.0;
        }
        if i == k {
            1.0
        } else if k > i && k - i <= self.delays {
            self.upper[(i, k - i - 1)]
        } else if i > k && i - k <= self.delays {
            self.lower.as_ref().map_or(0.0, |l| l[(i, i - k - 1)])
        } else {
            0.0
        }
    }

    pub fn dense(&self) -> Matrix {
        let mut d = Matrix::zeros(self.len, self.len);
        for i in 0..self.len {
            for k in i.saturating_sub(self.delays)..(i + self.delays + 1).min(self.len) {
                d[(i, k)] = self.get(i, k);
            }
        }
        d
    }

    /// Column view: `h[k] = Σ_i D̂[i,k] m[i]`.
    pub fn combine(&self, m: &Matrix) -> Result<Matrix> {
        if m.rows() != self.len {
            return Err(Error::invalid(format!(
                "memory has {} rows, gate matrix covers {}",
                m.rows(),
                self.len
            )));
        }
        let mut h = Matrix::zeros(m.rows(), m.cols());
        for k in 0..self.len {
            let lo = k.saturating_sub(self.delays);
            let hi = (k + self.delays + 1).min(self.len);
            for i in lo..hi {
                let w = self.get(i, k);
                if w != 0.0 {
                    let mi = m.row(i).to_vec();
                    axpy_slice(w, &mi, h.row_mut(k));
                }
            }
        }
        Ok(h)
    }

    /// Plain-text grid: one line per emission step, offsets `1..n` as columns
    /// (backward offsets follow after a `|` separator when present).
    pub fn write_grid(&self, mut out: impl Write) -> std::io::Result<()> {
        for i in 0..self.len {
            let mut cells: Vec<String> = self
                .upper
                .row(i)
                .iter()
                .map(|v| format!("{v:.9}"))
                .collect();
            if let Some(l) = &self.lower {
                cells.push("|".into());
                cells.extend(l.row(i).iter().map(|v| format!("{v:.9}")));
            }
            writeln!(out, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Assembles `D̂` from gate sequences; the efficient variant is masked first.
pub fn build_gate_matrix(
    forward: &Matrix,
    backward: Option<&Matrix>,
    variant: Variant,
) -> Result<GateMatrix> {
    if forward.rows() == 0 {
        return Err(Error::invalid("gate matrix needs at least one step"));
    }
    let upper = match variant {
        Variant::Efficient => efficient_mask(forward).1,
        _ => forward.clone(),
    };
    let lower = match (variant, backward) {
        (Variant::Bidirectional, Some(b)) => {
            if b.shape() != forward.shape() {
                return Err(Error::invalid(
                    "backward gates must match the forward gate shape",
                ));
            }
            Some(b.clone())
        }
        (Variant::Bidirectional, None) => {
            return Err(Error::invalid(
                "bidirectional gate matrix needs backward gates",
            ))
        }
        _ => None,
    };
    Ok(GateMatrix {
        len: forward.rows(),
        delays: forward.cols(),
        upper,
        lower,
    })
}

/// Runs the layer over a whole sequence. Returns `(o, h)`.
pub fn pdmu_forward(params: &PdmuLayerParams, x: &Matrix, mode: Mode) -> Result<(Matrix, Matrix)> {
    params.validate()?;
    check_input(x, params.core.input_dim)?;
    params.check_mode(mode)?;
    match mode {
        Mode::Parallel => {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let vars = params.record(&mut tape, xv, "", mode)?;
            let h = tape.take_value(vars.memory);
            Ok((tape.take_value(vars.output), h))
        }
        Mode::Sequential => {
            let mut stepper = params.stepper()?;
            let mut o = Matrix::zeros(x.rows(), params.core.hidden_dim);
            let mut h = Matrix::zeros(x.rows(), params.core.memory_width());
            for k in 0..x.rows() {
                o.row_mut(k).copy_from_slice(stepper.step(x.row(k)));
                h.row_mut(k).copy_from_slice(stepper.combined());
            }
            Ok((o, h))
        }
    }
}

/// Streaming evaluation of a causal PDMU layer.
#[derive(Debug, Clone)]
pub struct PdmuStepper<'a> {
    layer: &'a PdmuLayerParams,
    drive: Drive,
    core: LmuStepper<'a>,
    logits: Vec<f64>,
    gates: Vec<f64>,
    scratch: Vec<f64>,
    /// `ring[s]` accumulates contributions due at the step `≡ s (mod n)`.
    ring: Vec<Vec<f64>>,
    combined: Vec<f64>,
    output: Vec<f64>,
    step: usize,
}

impl<'a> PdmuStepper<'a> {
    pub fn new(layer: &'a PdmuLayerParams) -> Result<Self> {
        Self::with_drive(layer, Drive::Smooth(layer.core.f_u))
    }

    /// With `Drive::Spike` the branch inputs are binary and the readout
    /// returns the raw current `W_x x + W_m h + b_o`.
    pub(crate) fn with_drive(layer: &'a PdmuLayerParams, drive: Drive) -> Result<Self> {
        layer.check_mode(Mode::Sequential)?;
        let n = layer.delays;
        let width = layer.core.memory_width();
        Ok(Self {
            layer,
            drive,
            core: LmuStepper::with_drive(&layer.core, drive),
            logits: vec![0.0; n],
            gates: vec![0.0; n],
            scratch: vec![0.0; n],
            ring: vec![vec![0.0; width]; n],
            combined: vec![0.0; width],
            output: vec![0.0; layer.core.hidden_dim],
            step: 0,
        })
    }

    pub fn reset(&mut self) {
        self.core.reset();
        self.logits.fill(0.0);
        self.ring.iter_mut().for_each(|r| r.fill(0.0));
        self.combined.fill(0.0);
        self.output.fill(0.0);
        self.step = 0;
    }

    /// Combined memory `h` of the last step.
    pub fn combined(&self) -> &[f64] {
        &self.combined
    }

    /// Gates emitted at the last step (masked for the efficient variant).
    pub fn gates(&self) -> &[f64] {
        &self.gates
    }

    /// Scalars of carried state excluding the delay ring.
    pub fn state_len(&self) -> usize {
        self.core.state_len() + self.logits.len()
    }

    pub fn step(&mut self, x: &[f64]) -> &[f64] {
        let layer = self.layer;
        let n = layer.delays;
        self.core.advance_memory(x);

        let v = gate_drive(&layer.forward_gate, self.drive, x);
        layer
            .gate
            .system()
            .step(&mut self.logits, v, &mut self.scratch);
        self.gates.copy_from_slice(&self.logits);
        softmax_in_place(&mut self.gates);
        if layer.variant == Variant::Efficient {
            let keep = argmax(&self.logits);
            for (j, g) in self.gates.iter_mut().enumerate() {
                if j != keep {
                    *g = 0.0;
                }
            }
        }

        let memory = self.core.memory();
        let slot = self.step % n;
        for ((h, m), pending) in self.combined.iter_mut().zip(memory).zip(&self.ring[slot]) {
            *h = m + pending;
        }
        self.ring[slot].fill(0.0);
        for j in 1..=n {
            let g = self.gates[j - 1];
            if g != 0.0 {
                axpy_slice(g, memory, &mut self.ring[(self.step + j) % n]);
            }
        }
        self.step += 1;

        let act = match self.drive {
            Drive::Smooth(_) => layer.core.f_o,
            Drive::Spike(_) => Activation::Identity,
        };
        readout_into(&layer.core, x, &self.combined, act, &mut self.output);
        &self.output
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::seeded_rng;
    use crate::ssm::max_relative_error;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    fn random_gates(t: usize, n: usize, seed: u64) -> Matrix {
        let mut g = random(t, n, seed).scaled(3.0);
        for r in 0..t {
            softmax_in_place(g.row_mut(r));
        }
        g
    }

    fn cfg(m: usize, n_hidden: usize, q: usize, delays: usize) -> LayerConfig {
        LayerConfig {
            input_dim: m,
            hidden_dim: n_hidden,
            memory_order: Some(q),
            delays,
            ..LayerConfig::default()
        }
    }

    fn brute_combine(m: &Matrix, f: &Matrix, b: Option<&Matrix>) -> Matrix {
        let (t, n) = (m.rows(), f.cols());
        let mut h = m.clone();
        for k in 0..t {
            for i in 0..t {
                if i < k && k - i <= n {
                    for c in 0..m.cols() {
                        h[(k, c)] += f[(i, k - i - 1)] * m[(i, c)];
                    }
                }
                if let Some(b) = b {
                    if i > k && i - k <= n {
                        for c in 0..m.cols() {
                            h[(k, c)] += b[(i, i - k - 1)] * m[(i, c)];
                        }
                    }
                }
            }
        }
        h
    }

    #[test]
    fn zero_gate_input_gives_uniform_gates() {
        let p = PdmuLayerParams::zeros(&cfg(3, 2, 4, 5), Variant::Plain).unwrap();
        let x = random(10, 3, 1);
        for mode in [Mode::Parallel, Mode::Sequential] {
            let g = delay_gates(&p, &x, mode).unwrap();
            assert!(g.as_slice().iter().all(|v| (v - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn single_delay_gate_is_one() {
        let p = PdmuLayerParams::new(&cfg(2, 3, 4, 1), Variant::Plain, &mut seeded_rng(0)).unwrap();
        let g = delay_gates(&p, &random(8, 2, 2), Mode::Parallel).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gate_paths_agree() {
        let p = PdmuLayerParams::new(&cfg(3, 4, 6, 5), Variant::Plain, &mut seeded_rng(3)).unwrap();
        let x = random(40, 3, 4);
        let par = delay_gates(&p, &x, Mode::Parallel).unwrap();
        let seq = delay_gates(&p, &x, Mode::Sequential).unwrap();
        assert!(max_relative_error(&seq, &par) < 1e-8);
    }

    #[test]
    fn skip_connection_limit() {
        let m = random(6, 2, 5);
        let h = combine_delayed(&m, &Matrix::filled(6, 1, 1.0), None, Variant::Plain).unwrap();
        assert_eq!(h.row(0), m.row(0));
        for k in 1..6 {
            for c in 0..2 {
                assert_eq!(h[(k, c)], m[(k, c)] + m[(k - 1, c)]);
            }
        }
    }

    #[test]
    fn zero_memory_stays_zero() {
        let m = Matrix::zeros(7, 3);
        let h = combine_delayed(&m, &random_gates(7, 3, 1), None, Variant::Plain).unwrap();
        assert_eq!(h, m);
    }

    #[test]
    fn combine_matches_double_loop() {
        let m = random(12, 3, 6);
        let f = random_gates(12, 4, 7);
        let b = random_gates(12, 4, 8);
        let h = combine_delayed(&m, &f, None, Variant::Plain).unwrap();
        assert!(h.sub(&brute_combine(&m, &f, None)).max_abs() < 1e-12);
        let hb = combine_delayed(&m, &f, Some(&b), Variant::Bidirectional).unwrap();
        assert!(hb.sub(&brute_combine(&m, &f, Some(&b))).max_abs() < 1e-12);
        let he = combine_delayed(&m, &f, None, Variant::Efficient).unwrap();
        assert!(
            he.sub(&brute_combine(&m, &efficient_mask(&f).1, None))
                .max_abs()
                < 1e-12
        );
    }

    #[test]
    fn gate_matrix_first_columns() {
        let f = Matrix::from_rows(&[[0.3, 0.7], [0.6, 0.4], [0.5, 0.5]]);
        let d = build_gate_matrix(&f, None, Variant::Plain).unwrap().dense();
        assert_eq!(d.col(1), vec![0.3, 1.0, 0.0]);
        assert_eq!(d.col(2), vec![0.7, 0.6, 1.0]);
        assert_eq!(d.col(0), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn single_step_gate_matrix() {
        let g = build_gate_matrix(&Matrix::filled(1, 3, 1.0 / 3.0), None, Variant::Plain).unwrap();
        assert_eq!(g.dense(), Matrix::from_rows(&[[1.0]]));
    }

    #[test]
    fn column_view_equals_loop_form() {
        let m = random(15, 2, 9);
        let f = random_gates(15, 4, 10);
        let b = random_gates(15, 4, 11);
        for (variant, back) in [
            (Variant::Plain, None),
            (Variant::Efficient, None),
            (Variant::Bidirectional, Some(&b)),
        ] {
            let gm = build_gate_matrix(&f, back, variant).unwrap();
            let lhs = gm.combine(&m).unwrap();
            let rhs = combine_delayed(&m, &f, back, variant).unwrap();
            assert!(lhs.sub(&rhs).max_abs() < 1e-12, "{variant}");
        }
    }

    #[test]
    fn mask_examples() {
        let (mask, masked) =
            efficient_mask(&Matrix::from_rows(&[[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]]));
        assert_eq!(mask, Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]));
        assert_eq!(masked.row(0), &[0.0, 0.7, 0.0]);
        let (one, _) = efficient_mask(&Matrix::filled(4, 1, 1.0));
        assert!(one.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn modes_agree_for_causal_variants() {
        for variant in [Variant::Plain, Variant::Efficient] {
            let p = PdmuLayerParams::new(&cfg(3, 5, 6, 4), variant, &mut seeded_rng(12)).unwrap();
            let x = random(50, 3, 13);
            let (op, hp) = pdmu_forward(&p, &x, Mode::Parallel).unwrap();
            let (os, hs) = pdmu_forward(&p, &x, Mode::Sequential).unwrap();
            assert!(max_relative_error(&os, &op) < 1e-8, "{variant}");
            assert!(max_relative_error(&hs, &hp) < 1e-8, "{variant}");
        }
    }

    #[test]
    fn bidirectional_has_no_sequential_form() {
        let p = PdmuLayerParams::new(&cfg(2, 3, 4, 2), Variant::Bidirectional, &mut seeded_rng(1))
            .unwrap();
        let x = random(5, 2, 1);
        assert!(matches!(
            pdmu_forward(&p, &x, Mode::Sequential),
            Err(Error::UnsupportedMode(_))
        ));
        assert!(pdmu_forward(&p, &x, Mode::Parallel).is_ok());
    }

    #[test]
    fn counts() {
        let p = PdmuLayerParams::zeros(&cfg(1, 1, 1, 1), Variant::Plain).unwrap();
        assert_eq!(p.param_count(), 7);
        let big = PdmuLayerParams::zeros(&cfg(1, 128, 128, 5), Variant::Plain).unwrap();
        assert_eq!(big.runtime_state_count(), 261);
        assert_eq!(big.stepper().unwrap().state_len(), 261);
        assert_eq!(big.delay_ring_len(), 5 * 128);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("efficient".parse::<Variant>().unwrap(), Variant::Efficient);
        assert!(matches!(
            "lstm".parse::<Variant>(),
            Err(Error::UnsupportedVariant(_))
        ));
    }
}
