//! Stacked memory layers with a linear head.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::kaiming_uniform;
use crate::layer::{check_input, LayerConfig, Mode, Parameters};
use crate::linalg::{dot, Matrix};
use crate::lmu::{LmuLayerParams, LmuStepper};
use crate::pdmu::{GateSequences, PdmuLayerParams, PdmuStepper, Variant};
use crate::spiking::{
    is_binary, EncoderStepper, LifConfig, SpikeEncoder, SpikingDmuParams, SpikingStepper,
    SynopCounter,
};
use crate::tape::{argmax, Gradients, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    Lmu,
    Pdmu,
    BiPdmu,
    Epdmu,
    SpikingDmu,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Lmu,
        ModelVariant::Pdmu,
        ModelVariant::BiPdmu,
        ModelVariant::Epdmu,
        ModelVariant::SpikingDmu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Lmu => "lmu",
            ModelVariant::Pdmu => "pdmu",
            ModelVariant::BiPdmu => "bi-pdmu",
            ModelVariant::Epdmu => "epdmu",
            ModelVariant::SpikingDmu => "spiking-dmu",
        }
    }

    pub fn is_spiking(self) -> bool {
        self == ModelVariant::SpikingDmu
    }

    pub fn is_gated(self) -> bool {
        self != ModelVariant::Lmu
    }

    pub fn supports(self, mode: Mode) -> bool {
        !(self == ModelVariant::BiPdmu && mode == Mode::Sequential)
    }

    /// Gate arrangement used by the delayed-memory layers.
    pub fn gate_variant(self) -> Variant {
        match self {
            ModelVariant::BiPdmu => Variant::Bidirectional,
            ModelVariant::Epdmu => Variant::Efficient,
            _ => Variant::Plain,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnsupportedVariant(s.to_string()))
    }
}

/// How the head output becomes a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Readout {
    /// Class logits taken at the final step.
    LastStep,
    /// Class logits averaged over time.
    MeanPool,
    /// One regression output per step.
    PerStep,
}

impl Readout {
    pub fn name(self) -> &'static str {
        match self {
            Readout::LastStep => "last",
            Readout::MeanPool => "mean",
            Readout::PerStep => "per-step",
        }
    }

    pub fn is_classification(self) -> bool {
        self != Readout::PerStep
    }
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Readout::LastStep),
            "mean" => Ok(Readout::MeanPool),
            "per-step" => Ok(Readout::PerStep),
            other => Err(Error::invalid(format!("unknown readout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub variant: ModelVariant,
    /// Shapes of the first layer; later layers take `hidden_dim` inputs.
    pub layer: LayerConfig,
    pub layers: usize,
    pub outputs: usize,
    pub readout: Readout,
    pub lif: LifConfig,
    /// Spiking models on real-valued data get an encoder of this width.
    pub encoder_channels: Option<usize>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        if self.outputs == 0 {
            return Err(Error::invalid("a network needs at least one output"));
        }
        if self.readout.is_classification() && self.outputs < 2 {
            return Err(Error::invalid("classification needs at least two classes"));
        }
        if self.encoder_channels == Some(0) {
            return Err(Error::invalid("encoder width must be positive"));
        }
        if self.encoder_channels.is_some() && !self.variant.is_spiking() {
            return Err(Error::invalid("only spiking models use a spike encoder"));
        }
        if self.variant.is_spiking() {
            self.lif.validate()?;
        }
        Ok(())
    }
}

/// Forward and optional backward gate handles of one gated layer.
pub type GateVars = (Var, Option<Var>);

#[derive(Debug, Clone)]
pub enum Layer {
    Lmu(LmuLayerParams),
    Pdmu(PdmuLayerParams),
    Spiking(SpikingDmuParams),
}

impl Layer {
    pub fn hidden_dim(&self) -> usize {
        match self {
            Layer::Lmu(l) => l.hidden_dim,
            Layer::Pdmu(p) => p.core.hidden_dim,
            Layer::Spiking(s) => s.hidden_dim(),
        }
    }

    pub fn runtime_state_count(&self) -> usize {
        match self {
            Layer::Lmu(l) => l.runtime_state_count(),
            Layer::Pdmu(p) => p.runtime_state_count(),
            Layer::Spiking(s) => s.core.runtime_state_count(),
        }
    }

    pub fn set_fft_threshold(&mut self, threshold: usize) {
        match self {
            Layer::Lmu(l) => l.set_fft_threshold(threshold),
            Layer::Pdmu(p) => p.set_fft_threshold(threshold),
            Layer::Spiking(s) => s.core.set_fft_threshold(threshold),
        }
    }

    fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        prefix: &str,
        mode: Mode,
    ) -> Result<(Var, Option<GateVars>)> {
        Ok(match self {
            Layer::Lmu(l) => (l.record(tape, x, prefix, mode).output, None),
            Layer::Pdmu(p) => {
                let vars = p.record(tape, x, prefix, mode)?;
                (vars.output, vars.gates)
            }
            Layer::Spiking(s) => {
                let vars = s.record(tape, x, prefix, mode);
                (vars.output, Some((vars.gates, None)))
            }
        })
    }

    fn as_params(&self) -> &dyn Parameters {
        match self {
            Layer::Lmu(l) => l,
            Layer::Pdmu(p) => p,
            Layer::Spiking(s) => s,
        }
    }

    fn as_params_mut(&mut self) -> &mut dyn Parameters {
        match self {
            Layer::Lmu(l) => l,
            Layer::Pdmu(p) => p,
            Layer::Spiking(s) => s,
        }
    }
}

/// Supervision for one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target<'a> {
    Class(usize),
    Sequence(&'a Matrix),
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetworkSpec,
    pub encoder: Option<SpikeEncoder>,
    pub layers: Vec<Layer>,
    /// `outputs x hidden`
    pub head_w: Matrix,
    /// `1 x outputs`
    pub head_b: Matrix,
}

fn layer_prefix(i: usize) -> String {
    format!("layer{i}.")
}

impl Network {
    pub fn new(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let encoder = match spec.encoder_channels {
            Some(c) => Some(SpikeEncoder::new(spec.layer.input_dim, c, spec.lif, rng)?),
            None => None,
        };
        let mut layers = Vec::with_capacity(spec.layers);
        let mut input_dim = spec.encoder_channels.unwrap_or(spec.layer.input_dim);
        for _ in 0..spec.layers {
            let cfg = LayerConfig {
                input_dim,
                ..spec.layer.clone()
            };
            let layer = match spec.variant {
                ModelVariant::Lmu => Layer::Lmu(LmuLayerParams::new(&cfg, rng)?),
                ModelVariant::SpikingDmu => {
                    Layer::Spiking(SpikingDmuParams::new(&cfg, spec.lif, rng)?)
                }
                v => Layer::Pdmu(PdmuLayerParams::new(&cfg, v.gate_variant(), rng)?),
            };
            input_dim = layer.hidden_dim();
            layers.push(layer);
        }
        let hidden = input_dim;
        Ok(Self {
            spec: spec.clone(),
            encoder,
            layers,
            head_w: kaiming_uniform(spec.outputs, hidden, hidden, rng),
            head_b: kaiming_uniform(1, spec.outputs, hidden, rng),
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.spec.variant
    }

    pub fn input_dim(&self) -> usize {
        self.spec.layer.input_dim
    }

    pub fn outputs(&self) -> usize {
        self.spec.outputs
    }

    pub fn set_fft_threshold(&mut self, threshold: usize) {
        self.spec.layer.fft_threshold = threshold;
        self.layers
            .iter_mut()
            .for_each(|l| l.set_fft_threshold(threshold));
    }

    /// Per-layer runtime state in sequential mode, summed.
    pub fn runtime_state_count(&self) -> usize {
        self.layers.iter().map(Layer::runtime_state_count).sum()
    }

    fn check_sequence(&self, x: &Matrix, mode: Mode) -> Result<()> {
        check_input(x, self.input_dim())?;
        if !self.variant().supports(mode) {
            return Err(Error::UnsupportedMode(format!(
                "{} has no {mode} form",
                self.variant()
            )));
        }
        if self.variant().is_spiking() && self.encoder.is_none() && !is_binary(x) {
            return Err(Error::invalid(
                "spiking model without an encoder needs binary input",
            ));
        }
        Ok(())
    }

    /// Records the whole network; returns head outputs (`T x outputs`) and
    /// the gate handles of every gated layer.
    pub fn record(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<(Var, Vec<GateVars>)> {
        let mut h = x;
        if let Some(enc) = &self.encoder {
            h = enc.record(tape, h, "encoder.");
        }
        let mut gates = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, g) = layer.record(tape, h, &layer_prefix(i), mode)?;
            gates.extend(g);
            h = out;
        }
        let w = tape.param("head.w", &self.head_w);
        let b = tape.param("head.b", &self.head_b);
        Ok((tape.linear(h, w, Some(b)), gates))
    }

    pub fn record_loss(&self, tape: &mut Tape, outputs: Var, target: Target<'_>) -> Result<Var> {
        match (self.spec.readout, target) {
            (Readout::LastStep, Target::Class(c)) => tape.cross_entropy(outputs, c, false),
            (Readout::MeanPool, Target::Class(c)) => tape.cross_entropy(outputs, c, true),
            (Readout::PerStep, Target::Sequence(t)) => tape.mse(outputs, t),
            _ => Err(Error::invalid(
                "target kind does not match the network readout",
            )),
        }
    }

    /// Loss and parameter gradients for one sequence.
    pub fn loss_and_grad(
        &self,
        x: &Matrix,
        target: Target<'_>,
        mode: Mode,
    ) -> Result<(f64, Gradients)> {
        self.check_sequence(x, mode)?;
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let (out, _) = self.record(&mut tape, xv, mode)?;
        let loss = self.record_loss(&mut tape, out, target)?;
        let value = tape.value(loss)[(0, 0)];
        Ok((value, tape.backward(loss)?))
    }

    pub fn loss(&self, x: &Matrix, target: Target<'_>, mode: Mode) -> Result<f64> {
        self.check_sequence(x, mode)?;
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let (out, _) = self.record(&mut tape, xv, mode)?;
        let loss = self.record_loss(&mut tape, out, target)?;
        Ok(tape.value(loss)[(0, 0)])
    }

    /// Head outputs for every step. Sequential mode streams the input
    /// through the step-by-step cells.
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        self.check_sequence(x, mode)?;
        match mode {
            Mode::Parallel => {
                let mut tape = Tape::new();
                let xv = tape.input(x.clone());
                let (out, _) = self.record(&mut tape, xv, mode)?;
                Ok(tape.take_value(out))
            }
            Mode::Sequential => {
                let mut stepper = self.stepper()?;
                let mut out = Matrix::zeros(x.rows(), self.outputs());
                for k in 0..x.rows() {
                    out.row_mut(k).copy_from_slice(stepper.step(x.row(k)));
                }
                Ok(out)
            }
        }
    }

    /// Class scores after the readout's time reduction.
    pub fn decode(&self, outputs: &Matrix) -> Vec<f64> {
        match self.spec.readout {
            Readout::LastStep | Readout::PerStep => outputs.row(outputs.rows() - 1).to_vec(),
            Readout::MeanPool => {
                let mut z = outputs.column_sums();
                z.scale(1.0 / outputs.rows() as f64);
                z.into_vec()
            }
        }
    }

    pub fn predict_class(&self, x: &Matrix, mode: Mode) -> Result<usize> {
        let out = self.forward(x, mode)?;
        Ok(argmax(&self.decode(&out)))
    }

    /// Gate sequences of every gated layer for one input, as used in the forward pass.
    pub fn gate_sequences(&self, x: &Matrix) -> Result<Vec<GateSequences>> {
        if !self.variant().is_gated() {
            return Err(Error::UnsupportedVariant(format!(
                "{} has no delay gates",
                self.variant()
            )));
        }
        self.check_sequence(x, Mode::Parallel)?;
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let mode = if self.variant().is_spiking() {
            Mode::Sequential
        } else {
            Mode::Parallel
        };
        let (_, gates) = self.record(&mut tape, xv, mode)?;
        Ok(gates
            .into_iter()
            .map(|(f, b)| GateSequences {
                forward: tape.value(f).clone(),
                backward: b.map(|b| tape.value(b).clone()),
            })
            .collect())
    }

    /// Spike and synaptic-operation counts of a spiking forward pass.
    pub fn synops(&self, x: &Matrix) -> Result<SynopCounter> {
        if !self.variant().is_spiking() {
            return Err(Error::UnsupportedVariant(format!(
                "{} does not spike",
                self.variant()
            )));
        }
        self.check_sequence(x, Mode::Sequential)?;
        let mut input = match &self.encoder {
            Some(enc) => crate::spiking::spike_encode(x, enc)?,
            None => x.clone(),
        };
        let mut total = SynopCounter::default();
        for layer in &self.layers {
            if let Layer::Spiking(s) = layer {
                let out = crate::spiking::spiking_dmu_forward(s, &input)?;
                total.merge(&out.synops);
                input = out.spikes;
            }
        }
        // spikes reaching the head
        total.record(&input, self.outputs());
        Ok(total)
    }

    pub fn stepper(&self) -> Result<NetworkStepper<'_>> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    Layer::Lmu(p) => LayerStepper::Lmu(p.stepper()),
                    Layer::Pdmu(p) => LayerStepper::Pdmu(p.stepper()?),
                    Layer::Spiking(s) => LayerStepper::Spiking(s.stepper()?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkStepper {
            network: self,
            encoder: self.encoder.as_ref().map(SpikeEncoder::stepper),
            layers,
            buffer: Vec::new(),
            output: vec![0.0; self.outputs()],
        })
    }
}

impl Parameters for Network {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        if let Some(enc) = &self.encoder {
            enc.visit_params(&mut |name, m| f(&format!("encoder.{name}"), m));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let prefix = layer_prefix(i);
            layer
                .as_params()
                .visit_params(&mut |name, m| f(&format!("{prefix}{name}"), m));
        }
        f("head.w", &self.head_w);
        f("head.b", &self.head_b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        if let Some(enc) = &mut self.encoder {
            enc.visit_params_mut(&mut |name, m| f(&format!("encoder.{name}"), m));
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let prefix = layer_prefix(i);
            layer
                .as_params_mut()
                .visit_params_mut(&mut |name, m| f(&format!("{prefix}{name}"), m));
        }
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }
}

#[derive(Debug, Clone)]
enum LayerStepper<'a> {
    Lmu(LmuStepper<'a>),
    Pdmu(PdmuStepper<'a>),
    Spiking(SpikingStepper<'a>),
}

/// Streaming inference through every layer and the head.
#[derive(Debug, Clone)]
pub struct NetworkStepper<'a> {
    network: &'a Network,
    encoder: Option<EncoderStepper<'a>>,
    layers: Vec<LayerStepper<'a>>,
    buffer: Vec<f64>,
    output: Vec<f64>,
}

impl NetworkStepper<'_> {
    /// Head output for one input step.
    pub fn step(&mut self, x: &[f64]) -> &[f64] {
        self.buffer.clear();
        match &mut self.encoder {
            Some(enc) => self.buffer.extend_from_slice(enc.step(x)),
            None => self.buffer.extend_from_slice(x),
        }
        for layer in &mut self.layers {
            let out = match layer {
                LayerStepper::Lmu(s) => s.step(&self.buffer),
                LayerStepper::Pdmu(s) => s.step(&self.buffer),
                LayerStepper::Spiking(s) => s.step(&self.buffer),
            };
            let out = out.to_vec();
            self.buffer = out;
        }
        let net = self.network;
        for (c, o) in self.output.iter_mut().enumerate() {
            *o = dot(net.head_w.row(c), &self.buffer) + net.head_b.as_slice()[c];
        }
        &self.output
    }
}
