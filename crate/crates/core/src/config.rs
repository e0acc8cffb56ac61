//! Run configuration in a `key = value` text format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layer::LayerConfig;
use crate::model::{ModelVariant, NetworkSpec, Readout};
use crate::optim::AdamConfig;
use crate::spiking::LifConfig;
use crate::tape::Activation;
use crate::train::TrainConfig;

pub const SEED_ENV: &str = "DLSSM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    DelayRecall,
    PsMnist,
    Spikes,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::DelayRecall => "delay-recall",
            Task::PsMnist => "psmnist",
            Task::Spikes => "spikes",
        }
    }

    pub fn default_readout(self) -> Readout {
        match self {
            Task::DelayRecall => Readout::PerStep,
            Task::PsMnist | Task::Spikes => Readout::LastStep,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delay-recall" => Ok(Task::DelayRecall),
            "psmnist" => Ok(Task::PsMnist),
            "spikes" => Ok(Task::Spikes),
            other => Err(Error::invalid(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub hidden: usize,
    pub memory_order: Option<usize>,
    pub memory_channels: usize,
    pub delays: usize,
    pub layers: usize,
    pub theta: Option<f64>,
    pub gate_theta: Option<f64>,
    pub dt: f64,
    pub fft_threshold: usize,
    pub input_activation: Activation,
    pub output_activation: Activation,
    pub readout: Option<Readout>,
    pub encoder_channels: Option<usize>,
    pub lif: LifConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let layer = LayerConfig::default();
        Self {
            variant: ModelVariant::Pdmu,
            hidden: layer.hidden_dim,
            memory_order: None,
            memory_channels: layer.memory_channels,
            delays: layer.delays,
            layers: 1,
            theta: None,
            gate_theta: None,
            dt: layer.dt,
            fft_threshold: layer.fft_threshold,
            input_activation: layer.input_activation,
            output_activation: layer.output_activation,
            readout: None,
            encoder_channels: None,
            lif: LifConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayRecallConfig {
    pub seq_len: usize,
    pub delay: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnistConfig {
    /// Directory with `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`.
    pub dir: Option<PathBuf>,
    pub subset: usize,
    pub perm_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub steps: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub val_fraction: f64,
    pub delay_recall: DelayRecallConfig,
    pub mnist: MnistConfig,
    pub events: Option<PathBuf>,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::DelayRecall,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            val_fraction: 0.2,
            delay_recall: DelayRecallConfig {
                seq_len: 64,
                delay: 4,
                train_samples: 1024,
                val_samples: 256,
            },
            mnist: MnistConfig {
                dir: None,
                subset: 10_000,
                perm_seed: 0,
            },
            events: None,
            bench: BenchConfig {
                steps: 3,
                seq_len: 512,
                batch: 64,
                hidden: 128,
            },
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    let v: usize = parse_value(key, value)?;
    if v == 0 {
        return Err(Error::config(key, "must be at least 1"));
    }
    Ok(v)
}

fn optional<T: FromStr>(key: &str, value: &str, check: impl Fn(&T) -> bool) -> Result<Option<T>> {
    if value == "none" {
        return Ok(None);
    }
    let v: T = parse_value(key, value)?;
    if !check(&v) {
        return Err(Error::config(key, format!("`{value}` is out of range")));
    }
    Ok(Some(v))
}

fn real(key: &str, value: &str, check: impl Fn(f64) -> bool) -> Result<f64> {
    let v: f64 = parse_value(key, value)?;
    if !v.is_finite() || !check(v) {
        return Err(Error::config(key, format!("`{value}` is out of range")));
    }
    Ok(v)
}

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(body, _)| body).trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(
                    format!("line {}", n + 1),
                    "expected `key = value`",
                ));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, "given more than once"));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let wrap = |e: Error| match e {
            Error::Config { .. } => e,
            other => Error::config(key, other.to_string()),
        };
        match key {
            "task" => self.task = v.parse().map_err(wrap)?,
            "variant" => m.variant = v.parse().map_err(wrap)?,
            "hidden" => m.hidden = positive(key, v)?,
            "memory_order" => m.memory_order = optional(key, v, |&q: &usize| q >= 1)?,
            "memory_channels" => m.memory_channels = positive(key, v)?,
            "delays" => m.delays = positive(key, v)?,
            "layers" => m.layers = positive(key, v)?,
            "theta" => m.theta = optional(key, v, |&x: &f64| x > 0.0 && x.is_finite())?,
            "gate_theta" => m.gate_theta = optional(key, v, |&x: &f64| x > 0.0 && x.is_finite())?,
            "dt" => m.dt = real(key, v, |x| x > 0.0)?,
            "fft_threshold" => m.fft_threshold = parse_value(key, v)?,
            "input_activation" => {
                m.input_activation = Activation::parse(v)
                    .ok_or_else(|| Error::config(key, format!("unknown activation `{v}`")))?
            }
            "output_activation" => {
                m.output_activation = Activation::parse(v)
                    .ok_or_else(|| Error::config(key, format!("unknown activation `{v}`")))?
            }
            "decode" => {
                m.readout = if v == "auto" {
                    None
                } else {
                    Some(v.parse().map_err(wrap)?)
                }
            }
            "encoder_channels" => m.encoder_channels = optional(key, v, |&c: &usize| c >= 1)?,
            "threshold" => m.lif.threshold = real(key, v, |x| x > 0.0)?,
            "leak" => m.lif.leak = real(key, v, |x| x > 0.0 && x <= 1.0)?,
            "surrogate_width" => m.lif.surrogate_width = real(key, v, |x| x > 0.0)?,
            "lr" => t.adam.lr = real(key, v, |x| x > 0.0)?,
            "beta1" => t.adam.beta1 = real(key, v, |x| (0.0..1.0).contains(&x))?,
            "beta2" => t.adam.beta2 = real(key, v, |x| (0.0..1.0).contains(&x))?,
            "eps" => t.adam.eps = real(key, v, |x| x > 0.0)?,
            "clip" => t.adam.clip_norm = optional(key, v, |&x: &f64| x > 0.0 && x.is_finite())?,
            "batch" => t.batch_size = positive(key, v)?,
            "epochs" => t.epochs = positive(key, v)?,
            "patience" => t.patience = optional(key, v, |&p: &usize| p >= 1)?,
            "max_steps" => t.max_steps = optional(key, v, |&s: &u64| s >= 1)?,
            "seed" => t.seed = parse_value(key, v)?,
            "workers" => t.workers = positive(key, v)?,
            "mode" => t.mode = v.parse().map_err(wrap)?,
            "val_fraction" => self.val_fraction = real(key, v, |x| (0.0..1.0).contains(&x))?,
            "seq_len" => self.delay_recall.seq_len = positive(key, v)?,
            "delay" => self.delay_recall.delay = parse_value(key, v)?,
            "train_samples" => self.delay_recall.train_samples = positive(key, v)?,
            "val_samples" => self.delay_recall.val_samples = positive(key, v)?,
            "mnist_dir" => self.mnist.dir = (v != "none").then(|| PathBuf::from(v)),
            "subset" => self.mnist.subset = positive(key, v)?,
            "perm_seed" => self.mnist.perm_seed = parse_value(key, v)?,
            "events" => self.events = (v != "none").then(|| PathBuf::from(v)),
            "bench_steps" => self.bench.steps = positive(key, v)?,
            "bench_seq_len" => self.bench.seq_len = positive(key, v)?,
            "bench_batch" => self.bench.batch = positive(key, v)?,
            "bench_hidden" => self.bench.hidden = positive(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !m.variant.supports(self.train.mode) {
            return Err(Error::config(
                "mode",
                format!("{} cannot run in {} mode", m.variant, self.train.mode),
            ));
        }
        if m.variant.is_gated() && m.delays >= 32 {
            return Err(Error::config("delays", "must be below 32"));
        }
        if self.task == Task::DelayRecall && self.delay_recall.delay >= self.delay_recall.seq_len {
            return Err(Error::config("delay", "must be shorter than seq_len"));
        }
        if m.encoder_channels.is_some() && !m.variant.is_spiking() {
            return Err(Error::config(
                "encoder_channels",
                "only spiking variants use an encoder",
            ));
        }
        let readout = self.readout();
        if (self.task == Task::DelayRecall) != (readout == Readout::PerStep) {
            return Err(Error::config(
                "decode",
                format!(
                    "`{}` does not fit task {}",
                    readout.name(),
                    self.task.name()
                ),
            ));
        }
        Ok(())
    }

    pub fn readout(&self) -> Readout {
        self.model
            .readout
            .unwrap_or_else(|| self.task.default_readout())
    }

    /// Replaces the seed with `DLSSM_SEED` when that is set.
    pub fn apply_env(&mut self) -> Result<()> {
        self.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config(SEED_ENV, format!("cannot parse `{v}`")))?;
        }
        Ok(())
    }

    pub fn layer_config(&self, input_dim: usize) -> LayerConfig {
        let m = &self.model;
        LayerConfig {
            input_dim,
            hidden_dim: m.hidden,
            memory_order: m.memory_order,
            memory_channels: m.memory_channels,
            delays: m.delays,
            theta: m.theta,
            gate_theta: m.gate_theta,
            dt: m.dt,
            input_activation: m.input_activation,
            output_activation: m.output_activation,
            fft_threshold: m.fft_threshold,
        }
    }

    pub fn network_spec(&self, input_dim: usize, outputs: usize) -> NetworkSpec {
        NetworkSpec {
            variant: self.model.variant,
            layer: self.layer_config(input_dim),
            layers: self.model.layers,
            outputs,
            readout: self.readout(),
            lif: self.model.lif,
            encoder_channels: self.model.encoder_channels,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        self.train.adam
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("task", self.task.name().into());
        put("variant", m.variant.name().into());
        put("hidden", m.hidden.to_string());
        put("memory_order", opt_str(&m.memory_order));
        put("memory_channels", m.memory_channels.to_string());
        put("delays", m.delays.to_string());
        put("layers", m.layers.to_string());
        put("theta", opt_str(&m.theta));
        put("gate_theta", opt_str(&m.gate_theta));
        put("dt", m.dt.to_string());
        put("fft_threshold", m.fft_threshold.to_string());
        put("input_activation", m.input_activation.name().into());
        put("output_activation", m.output_activation.name().into());
        put(
            "decode",
            m.readout.map_or("auto".into(), |r| r.name().into()),
        );
        put("encoder_channels", opt_str(&m.encoder_channels));
        put("threshold", m.lif.threshold.to_string());
        put("leak", m.lif.leak.to_string());
        put("surrogate_width", m.lif.surrogate_width.to_string());
        put("lr", t.adam.lr.to_string());
        put("beta1", t.adam.beta1.to_string());
        put("beta2", t.adam.beta2.to_string());
        put("eps", t.adam.eps.to_string());
        put("clip", opt_str(&t.adam.clip_norm));
        put("batch", t.batch_size.to_string());
        put("epochs", t.epochs.to_string());
        put("patience", opt_str(&t.patience));
        put("max_steps", opt_str(&t.max_steps));
        put("seed", t.seed.to_string());
        put("workers", t.workers.to_string());
        put("mode", t.mode.to_string());
        put("val_fraction", self.val_fraction.to_string());
        put("seq_len", self.delay_recall.seq_len.to_string());
        put("delay", self.delay_recall.delay.to_string());
        put("train_samples", self.delay_recall.train_samples.to_string());
        put("val_samples", self.delay_recall.val_samples.to_string());
        put(
            "mnist_dir",
            opt_str(&self.mnist.dir.as_ref().map(|p| p.display())),
        );
        put("subset", self.mnist.subset.to_string());
        put("perm_seed", self.mnist.perm_seed.to_string());
        put(
            "events",
            opt_str(&self.events.as_ref().map(|p| p.display())),
        );
        put("bench_steps", self.bench.steps.to_string());
        put("bench_seq_len", self.bench.seq_len.to_string());
        put("bench_batch", self.bench.batch.to_string());
        put("bench_hidden", self.bench.hidden.to_string());
        s
    }
}
