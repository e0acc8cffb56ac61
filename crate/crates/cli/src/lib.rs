//! Commands behind the `dlssm` binary.

pub mod bench;
pub mod tasks;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use dlssm::checkpoint::Checkpoint;
use dlssm::config::RunConfig;
use dlssm::data::SequenceBatch;
use dlssm::init::seeded_rng;
use dlssm::pdmu::build_gate_matrix;
use dlssm::train::{evaluate, EpochMetrics, Evaluation, Trainer, METRICS_HEADER};
use dlssm::{Error, Mode, Network, Result};

pub use bench::{run_bench, BenchRow, BENCH_HEADER};
pub use tasks::{load_task_data, resolve_eval_data, TaskData, MNIST_DIR_ENV};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const EVAL_HEADER: &str = "data,mode,samples,loss,accuracy";

/// Process exit status for a failed command: 2 for configuration problems,
/// 3 for unreadable or mismatched data, 4 for numeric failures.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::UnsupportedMode(_) | Error::UnsupportedVariant(_) => 2,
        Error::NumericOverflow { .. } | Error::NonFiniteGradient { .. } => 4,
        Error::InvalidArgument(_)
        | Error::InvalidState(_)
        | Error::Format { .. }
        | Error::Io(_) => 3,
    }
}

/// Reads, env-adjusts and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config {
        field: "config".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    let mut cfg = RunConfig::parse(&text)?;
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

pub fn cmd_train(config: &Path, out_dir: &Path) -> Result<TrainReport> {
    train_with(&load_config(config)?, out_dir, |_| {})
}

/// Trains from an already validated config. Metrics rows are appended and
/// flushed as each epoch ends, and the checkpoint is rewritten after it.
pub fn train_with(
    cfg: &RunConfig,
    out_dir: &Path,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    let data = load_task_data(cfg)?;
    let outputs = data.train.classes().unwrap_or(1);
    let spec = cfg.network_spec(data.train.input_dim(), outputs);
    let network = Network::new(&spec, &mut seeded_rng(cfg.train.seed))?;
    let mut trainer = Trainer::new(network, cfg.train.clone())?;

    fs::create_dir_all(out_dir)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let metrics = out_dir.join(METRICS_FILE);
    let mut csv = File::create(&metrics)?;
    writeln!(csv, "{METRICS_HEADER}")?;

    let mut io_result = Ok(());
    trainer.fit(&data.train, &data.val, |m| {
        on_epoch(m);
        if io_result.is_ok() {
            io_result = writeln!(csv, "{}", m.csv_row()).and_then(|_| csv.flush());
        }
    })?;
    io_result?;
    Checkpoint::from_trainer(cfg, &trainer).save(&checkpoint)?;
    Ok(TrainReport {
        history: trainer.history,
        checkpoint,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: Mode,
    pub samples: usize,
    pub evaluation: Evaluation,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let acc = self
            .evaluation
            .accuracy
            .map_or_else(|| "n/a".to_string(), |a| format!("{:.4}", a));
        format!(
            "mode={} samples={} loss={:.6e} accuracy={acc}",
            self.mode, self.samples, self.evaluation.loss
        )
    }
}

pub fn eval_checkpoint(ckpt: &Checkpoint, data: &SequenceBatch, mode: Mode) -> Result<EvalReport> {
    let network = ckpt.network()?;
    if !network.variant().supports(mode) {
        return Err(Error::UnsupportedMode(format!(
            "{} cannot run in {mode} mode",
            network.variant()
        )));
    }
    if data.input_dim() != network.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "data has {} input channels, checkpoint expects {}",
            data.input_dim(),
            network.input_dim()
        )));
    }
    let evaluation = evaluate(&network, data, mode, ckpt.config.train.workers)?;
    Ok(EvalReport {
        mode,
        samples: data.len(),
        evaluation,
    })
}

/// Evaluates a checkpoint and appends the result to `eval.csv` beside it.
pub fn cmd_eval(
    ckpt_path: &Path,
    data: &str,
    mode: Mode,
    limit: Option<usize>,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let batch = resolve_eval_data(&ckpt.config, data, limit)?;
    let report = eval_checkpoint(&ckpt, &batch, mode)?;
    let out = ckpt_path.parent().unwrap_or(Path::new(".")).join(EVAL_FILE);
    let fresh = fs::metadata(&out).map_or(true, |m| m.len() == 0);
    let mut f = OpenOptions::new().create(true).append(true).open(&out)?;
    if fresh {
        writeln!(f, "{EVAL_HEADER}")?;
    }
    let acc = report
        .evaluation
        .accuracy
        .map_or(String::new(), |a| a.to_string());
    writeln!(
        f,
        "{},{},{},{},{acc}",
        data.replace(',', ";"),
        report.mode,
        report.samples,
        report.evaluation.loss
    )?;
    Ok(report)
}

pub fn cmd_bench(config: &Path) -> Result<Vec<BenchRow>> {
    run_bench(&load_config(config)?)
}

/// Gate grid of each delayed-memory layer for one sample, one text block per
/// layer in layer order.
pub fn gate_grids(network: &Network, x: &dlssm::Matrix) -> Result<Vec<String>> {
    let variant = network.variant().gate_variant();
    network
        .gate_sequences(x)?
        .iter()
        .map(|g| {
            let matrix = build_gate_matrix(&g.forward, g.backward.as_ref(), variant)?;
            let mut buf = Vec::new();
            matrix.write_grid(&mut buf)?;
            Ok(String::from_utf8(buf).expect("grid is ascii"))
        })
        .collect()
}

/// Writes `gates-sample<idx>-layer<l>.txt` files and returns their paths.
/// Without `data`, the sample comes from the checkpoint task's validation set.
pub fn cmd_gates(
    ckpt_path: &Path,
    sample: usize,
    data: Option<&str>,
    out_dir: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let network = ckpt.network()?;
    if !network.variant().is_gated() {
        return Err(Error::UnsupportedVariant(format!(
            "{} checkpoints have no delay gates",
            network.variant()
        )));
    }
    let batch = match data {
        Some(spec) => resolve_eval_data(&ckpt.config, spec, None)?,
        None => load_task_data(&ckpt.config)?.val,
    };
    let x = batch.inputs.get(sample).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "sample {sample} out of range ({} available)",
            batch.len()
        ))
    })?;
    let dir = out_dir.map_or_else(
        || ckpt_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        Path::to_path_buf,
    );
    fs::create_dir_all(&dir)?;
    let mut paths = Vec::new();
    for (l, grid) in gate_grids(&network, x)?.into_iter().enumerate() {
        let path = dir.join(format!("gates-sample{sample}-layer{l}.txt"));
        fs::write(&path, grid)?;
        paths.push(path);
    }
    Ok(paths)
}
