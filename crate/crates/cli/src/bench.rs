//! Wall-clock cost of one training step on each evaluation path.

use std::fmt::Write as _;
use std::time::Instant;

use dlssm::config::RunConfig;
use dlssm::data::{delay_recall_task, Targets};
use dlssm::init::seeded_rng;
use dlssm::optim::AdamState;
use dlssm::rnn::Lstm;
use dlssm::train::{TrainConfig, Trainer};
use dlssm::{Error, Mode, ModelVariant, Network, Readout, Result};

pub const BENCH_HEADER: &str = "variant,T,batch,N,ms_per_step,ratio_vs_sequential";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: String,
    pub seq_len: usize,
    pub batch: usize,
    pub hidden: usize,
    pub ms_per_step: f64,
    /// Sequential PDMU time divided by this row's time.
    pub ratio_vs_sequential: f64,
}

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3}",
            self.variant,
            self.seq_len,
            self.batch,
            self.hidden,
            self.ms_per_step,
            self.ratio_vs_sequential
        )
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

fn mean_ms(steps: usize, mut step: impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..steps {
        step()?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / steps as f64)
}

/// Times `bench_steps` optimizer steps of a single-layer PDMU in parallel
/// and sequential mode, and of an LSTM with the same hidden width.
pub fn run_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    let b = &cfg.bench;
    if b.steps == 0 || b.seq_len == 0 || b.batch == 0 || b.hidden == 0 {
        return Err(Error::Config {
            field: "bench".into(),
            message: "bench sizes must be at least 1".into(),
        });
    }
    let delay = cfg.delay_recall.delay.min(b.seq_len - 1);
    let data = delay_recall_task(b.batch, b.seq_len, delay, cfg.train.seed)?;
    let indices: Vec<usize> = (0..b.batch).collect();

    let mut model_cfg = cfg.clone();
    model_cfg.model.variant = ModelVariant::Pdmu;
    model_cfg.model.hidden = b.hidden;
    model_cfg.model.layers = 1;
    model_cfg.model.readout = Some(Readout::PerStep);
    model_cfg.model.encoder_channels = None;
    let spec = model_cfg.network_spec(1, 1);
    let network = Network::new(&spec, &mut seeded_rng(cfg.train.seed))?;

    let time_mode = |mode: Mode| -> Result<f64> {
        let tc = TrainConfig {
            mode,
            batch_size: b.batch,
            ..cfg.train.clone()
        };
        let mut trainer = Trainer::new(network.clone(), tc)?;
        mean_ms(b.steps, || trainer.train_step(&data, &indices).map(|_| ()))
    };
    let parallel = time_mode(Mode::Parallel)?;
    let sequential = time_mode(Mode::Sequential)?;

    let mut lstm = Lstm::new(1, b.hidden, 1, &mut seeded_rng(cfg.train.seed));
    let mut adam = AdamState::new(cfg.train.adam);
    let Targets::Sequences(targets) = &data.targets else {
        unreachable!("delay recall has sequence targets")
    };
    let lstm_ms = mean_ms(b.steps, || {
        let scale = 1.0 / b.batch as f64;
        let mut total = dlssm::Gradients::default();
        for (x, y) in data.inputs.iter().zip(targets) {
            let (_, g) = lstm.loss_and_grad(x, y)?;
            total.merge_scaled(&g, scale);
        }
        adam.step(&mut lstm, &total)
    })?;

    let row = |variant: &str, ms: f64| BenchRow {
        variant: variant.into(),
        seq_len: b.seq_len,
        batch: b.batch,
        hidden: b.hidden,
        ms_per_step: ms,
        ratio_vs_sequential: sequential / ms,
    };
    Ok(vec![
        row("pdmu-parallel", parallel),
        row("pdmu-sequential", sequential),
        row("lstm", lstm_ms),
    ])
}
