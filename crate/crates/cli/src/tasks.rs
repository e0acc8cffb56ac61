//! Dataset resolution for the configured task.

use std::path::{Path, PathBuf};

use dlssm::config::{RunConfig, Task};
use dlssm::data::{
    delay_recall_task, load_binned_spikes, load_mnist_idx, permute_sequence, pixel_permutation,
    split_indices, SequenceBatch,
};
use dlssm::{Error, Result};

/// Overrides the MNIST directory when the config leaves it unset.
pub const MNIST_DIR_ENV: &str = "DLSSM_MNIST_DIR";

const VAL_STREAM: u64 = 0x5EED_0F0A_11D8_7E57;

pub struct TaskData {
    pub train: SequenceBatch,
    pub val: SequenceBatch,
}

pub fn mnist_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.mnist
        .dir
        .clone()
        .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::Config {
            field: "mnist_dir".into(),
            message: format!("not set and {MNIST_DIR_ENV} is empty"),
        })
}

/// First file in `dir` whose name starts with one of `stems` (in order).
fn find_idx(dir: &Path, stems: &[&str]) -> Result<PathBuf> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    for stem in stems {
        if let Some(p) = names.iter().find(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(stem))
        }) {
            return Ok(p.clone());
        }
    }
    Err(Error::InvalidArgument(format!(
        "no file starting with {stems:?} in {}",
        dir.display()
    )))
}

/// Loads the MNIST split found in `dir`; `prefer_test` picks t10k files first.
pub fn load_mnist_dir(dir: &Path, prefer_test: bool) -> Result<dlssm::data::ImageSet> {
    let (first, second) = if prefer_test {
        ("t10k", "train")
    } else {
        ("train", "t10k")
    };
    let images = find_idx(
        dir,
        &[&format!("{first}-images"), &format!("{second}-images")],
    )?;
    let labels_stem = images
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| {
            if n.starts_with("t10k") {
                "t10k-labels"
            } else {
                "train-labels"
            }
        })
        .unwrap_or("train-labels");
    let labels = find_idx(dir, &[labels_stem])?;
    load_mnist_idx(&images, &labels)
}

pub fn load_task_data(cfg: &RunConfig) -> Result<TaskData> {
    let seed = cfg.train.seed;
    match cfg.task {
        Task::DelayRecall => {
            let d = &cfg.delay_recall;
            Ok(TaskData {
                train: delay_recall_task(d.train_samples, d.seq_len, d.delay, seed)?,
                val: delay_recall_task(d.val_samples, d.seq_len, d.delay, seed ^ VAL_STREAM)?,
            })
        }
        Task::PsMnist => {
            let set = load_mnist_dir(&mnist_dir(cfg)?, false)?;
            let count = cfg.mnist.subset.min(set.len());
            let (train_idx, val_idx) = split_indices(count, cfg.val_fraction, cfg.mnist.perm_seed)?;
            let perm = pixel_permutation(set.images.rows * set.images.cols, cfg.mnist.perm_seed);
            Ok(TaskData {
                train: permute_sequence(&set, &train_idx, &perm)?,
                val: permute_sequence(&set, &val_idx, &perm)?,
            })
        }
        Task::Spikes => {
            let path = cfg.events.as_ref().ok_or_else(|| Error::Config {
                field: "events".into(),
                message: "spike task needs an event file".into(),
            })?;
            let all = load_binned_spikes(path)?;
            let (train_idx, val_idx) = split_indices(all.len(), cfg.val_fraction, seed)?;
            Ok(TaskData {
                train: all.subset(&train_idx),
                val: all.subset(&val_idx),
            })
        }
    }
}

/// Evaluation data named on the command line:
/// `synthetic[:samples[:seed]]` regenerates delay-recall sequences, a
/// directory is read as MNIST IDX files, any other path as a spike event file.
pub fn resolve_eval_data(
    cfg: &RunConfig,
    spec: &str,
    limit: Option<usize>,
) -> Result<SequenceBatch> {
    let data = if let Some(rest) = spec.strip_prefix("synthetic") {
        let mut parts = rest.split(':').skip(1);
        let d = &cfg.delay_recall;
        let num = |s: Option<&str>, default: u64| -> Result<u64> {
            s.map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number `{v}` in `{spec}`")))
            })
        };
        let samples = num(parts.next(), d.val_samples as u64)? as usize;
        let seed = num(parts.next(), cfg.train.seed ^ VAL_STREAM)?;
        delay_recall_task(samples, d.seq_len, d.delay, seed)?
    } else {
        let path = Path::new(spec);
        if path.is_dir() {
            let set = load_mnist_dir(path, true)?;
            let count = limit.unwrap_or(set.len()).min(set.len());
            let perm = pixel_permutation(set.images.rows * set.images.cols, cfg.mnist.perm_seed);
            let idx: Vec<usize> = (0..count).collect();
            return permute_sequence(&set, &idx, &perm);
        }
        load_binned_spikes(path)?
    };
    Ok(match limit {
        Some(n) if n < data.len() => data.subset(&(0..n).collect::<Vec<_>>()),
        _ => data,
    })
}
