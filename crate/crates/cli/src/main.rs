use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dlssm::Mode;
use dlssm_cli::{bench, cmd_bench, cmd_eval, cmd_gates, exit_code, load_config, train_with};

#[derive(Parser)]
#[command(
    name = "dlssm",
    version,
    about = "Train and inspect LMU / PDMU sequence models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Seq,
    Par,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin and metrics.csv into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint. --data is `synthetic[:samples[:seed]]`, an MNIST
    /// directory or a spike event file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, value_enum, default_value = "par")]
        mode: EvalMode,
        /// Evaluate only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Time training steps and print a CSV report.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the gate matrix of one sample as text grids, one file per layer.
    Gates {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> dlssm::Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let report = train_with(&cfg, &out, |m| {
                eprintln!(
                    "epoch {} train_loss {:.6e} val_loss {:.6e} val_acc {} ({:.1}s)",
                    m.epoch,
                    m.train_loss,
                    m.val_loss,
                    m.val_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                    m.seconds
                )
            })?;
            println!("checkpoint {}", report.checkpoint.display());
            println!("metrics {}", report.metrics.display());
        }
        Command::Eval {
            ckpt,
            data,
            mode,
            limit,
        } => {
            let mode = match mode {
                EvalMode::Seq => Mode::Sequential,
                EvalMode::Par => Mode::Parallel,
            };
            println!("{}", cmd_eval(&ckpt, &data, mode, limit)?.summary());
        }
        Command::Bench { config, out } => {
            let csv = bench::to_csv(&cmd_bench(&config)?);
            print!("{csv}");
            if let Some(path) = out {
                std::fs::write(path, csv)?;
            }
        }
        Command::Gates {
            ckpt,
            sample,
            data,
            out,
        } => {
            for p in cmd_gates(&ckpt, sample, data.as_deref(), out.as_deref())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
