//! Mini-batch training with Adam, per-epoch validation and early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::layer::Mode;
use crate::linalg::Matrix;
use crate::model::{Network, Readout};
use crate::optim::{AdamConfig, AdamState};
use crate::tape::{argmax, Gradients, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a lower validation loss.
    pub patience: Option<usize>,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub workers: usize,
    pub mode: Mode,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 10,
            patience: None,
            max_steps: None,
            seed: 0,
            workers: 1,
            mode: Mode::Parallel,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.workers == 0 {
            return Err(Error::invalid(
                "batch size, epochs and workers must be positive",
            ));
        }
        if self.patience == Some(0) || self.max_steps == Some(0) {
            return Err(Error::invalid("patience and step cap must be positive"));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy,seconds";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let acc = self
            .val_accuracy
            .map(|a| format!("{a:.6}"))
            .unwrap_or_default();
        format!(
            "{},{:.9},{:.9},{},{:.3}",
            self.epoch, self.train_loss, self.val_loss, acc, self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
    /// Predicted class per sample; empty for sequence targets.
    pub predictions: Vec<usize>,
}

fn pool(workers: usize) -> Result<Option<ThreadPool>> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))
}

fn map_samples<T: Send>(
    pool: Option<&ThreadPool>,
    indices: &[usize],
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    match pool {
        None => indices.iter().map(|&i| f(i)).collect(),
        Some(p) => p.install(|| indices.par_iter().map(|&i| f(i)).collect()),
    }
}

/// Mean loss and mean gradient over `indices`. Per-sample results are summed
/// in index order, so the result does not depend on the worker count.
pub fn batch_gradients(
    network: &Network,
    data: &SequenceBatch,
    indices: &[usize],
    mode: Mode,
    pool: Option<&ThreadPool>,
) -> Result<(f64, Gradients)> {
    if indices.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let per_sample = map_samples(pool, indices, |i| {
        network.loss_and_grad(&data.inputs[i], data.target(i), mode)
    })?;
    let scale = 1.0 / indices.len() as f64;
    let mut total = Gradients::default();
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        total.merge_scaled(g, scale);
    }
    Ok((loss * scale, total))
}

fn output_loss(network: &Network, outputs: &Matrix, data: &SequenceBatch, i: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let o = tape.input(outputs.clone());
    let l = network.record_loss(&mut tape, o, data.target(i))?;
    Ok(tape.value(l)[(0, 0)])
}

/// Loss and accuracy of `network` on every sample. Sequential mode runs the
/// streaming cells.
pub fn evaluate(
    network: &Network,
    data: &SequenceBatch,
    mode: Mode,
    workers: usize,
) -> Result<Evaluation> {
    let pool = pool(workers)?;
    evaluate_with(network, data, mode, pool.as_ref())
}

fn evaluate_with(
    network: &Network,
    data: &SequenceBatch,
    mode: Mode,
    pool: Option<&ThreadPool>,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let classify = network.spec.readout != Readout::PerStep;
    let rows = map_samples(pool, &indices, |i| {
        let out = network.forward(&data.inputs[i], mode)?;
        let loss = output_loss(network, &out, data, i)?;
        let pred = classify.then(|| argmax(&network.decode(&out)));
        Ok((loss, pred))
    })?;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
    let predictions: Vec<usize> = rows.iter().filter_map(|r| r.1).collect();
    let accuracy = match (&data.targets, classify) {
        (crate::data::Targets::Classes { labels, .. }, true) => {
            let hits = predictions
                .iter()
                .zip(labels)
                .filter(|(p, l)| p == l)
                .count();
            Some(hits as f64 / labels.len() as f64)
        }
        _ => None,
    };
    Ok(Evaluation {
        loss,
        accuracy,
        predictions,
    })
}

/// Order in which epoch `epoch` visits the training set.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    let stream = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    idx.shuffle(&mut seeded_rng(stream));
    idx
}

pub struct Trainer {
    pub network: Network,
    pub optimizer: AdamState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    pool: Option<ThreadPool>,
}

impl Trainer {
    pub fn new(network: Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if !network.variant().supports(config.mode) {
            return Err(Error::UnsupportedMode(format!(
                "{} cannot train in {} mode",
                network.variant(),
                config.mode
            )));
        }
        Ok(Self {
            network,
            optimizer: AdamState::new(config.adam),
            pool: pool(config.workers)?,
            config,
            epoch: 0,
            history: Vec::new(),
        })
    }

    /// Rebuilds a trainer from saved state.
    pub fn resume(
        network: Network,
        optimizer: AdamState,
        config: TrainConfig,
        history: Vec<EpochMetrics>,
    ) -> Result<Self> {
        let mut t = Self::new(network, config)?;
        t.optimizer = optimizer;
        t.epoch = history.len();
        t.history = history;
        Ok(t)
    }

    pub fn steps(&self) -> u64 {
        self.optimizer.step
    }

    fn budget_left(&self) -> bool {
        self.config
            .max_steps
            .is_none_or(|cap| self.optimizer.step < cap)
    }

    /// One optimizer step on the given samples; returns the batch loss
    /// before the update.
    pub fn train_step(&mut self, data: &SequenceBatch, indices: &[usize]) -> Result<f64> {
        let (loss, grads) = batch_gradients(
            &self.network,
            data,
            indices,
            self.config.mode,
            self.pool.as_ref(),
        )?;
        self.optimizer.step(&mut self.network, &grads)?;
        Ok(loss)
    }

    pub fn evaluate(&self, data: &SequenceBatch) -> Result<Evaluation> {
        evaluate_with(&self.network, data, self.config.mode, self.pool.as_ref())
    }

    pub fn run_epoch(
        &mut self,
        train: &SequenceBatch,
        val: &SequenceBatch,
    ) -> Result<EpochMetrics> {
        let start = Instant::now();
        let order = epoch_order(train.len(), self.config.seed, self.epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            if !self.budget_left() {
                break;
            }
            loss_sum += self.train_step(train, chunk)? * chunk.len() as f64;
            seen += chunk.len();
        }
        let eval = self.evaluate(val)?;
        self.epoch += 1;
        let m = EpochMetrics {
            epoch: self.epoch,
            train_loss: if seen == 0 {
                f64::NAN
            } else {
                loss_sum / seen as f64
            },
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.history.push(m);
        Ok(m)
    }

    /// Epoch budget spent, step cap reached, or no validation improvement
    /// within the patience window.
    pub fn is_converged(&self) -> bool {
        if self.epoch >= self.config.epochs || !self.budget_left() {
            return true;
        }
        let Some(patience) = self.config.patience else {
            return false;
        };
        let best = self
            .history
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.val_loss.total_cmp(&b.1.val_loss))
            .map(|(i, _)| i);
        best.is_some_and(|b| self.history.len() - 1 - b >= patience)
    }

    pub fn fit(
        &mut self,
        train: &SequenceBatch,
        val: &SequenceBatch,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<()> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::invalid(
                "training and validation sets must be non-empty",
            ));
        }
        while !self.is_converged() {
            let m = self.run_epoch(train, val)?;
            on_epoch(&m);
        }
        Ok(())
    }
}
