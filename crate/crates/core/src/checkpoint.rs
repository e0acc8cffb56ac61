//! Single-file training checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "DLSSMCKP"
//! version    u32      1
//! config     u32 length + UTF-8 run config text
//! input_dim  u32
//! outputs    u32
//! epoch      u64      completed epochs
//! adam       lr, beta1, beta2, eps as f64; clip as u8 flag + f64; step u64
//! params     u32 count, then per matrix: name, rows u32, cols u32, values
//! moments    u32 count, then per entry: name, rows u32, cols u32, first, second
//! history    u32 count, then per epoch: epoch u64, train f64, val f64,
//!            accuracy u8 flag + f64, seconds f64
//! crc32      u32 over every preceding byte
//! ```
//!
//! Names are a u32 length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::init::seeded_rng;
use crate::layer::Parameters;
use crate::linalg::Matrix;
use crate::model::Network;
use crate::optim::{AdamConfig, AdamState, Moments};
use crate::train::{EpochMetrics, Trainer};

pub const MAGIC: [u8; 8] = *b"DLSSMCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub input_dim: usize,
    pub outputs: usize,
    pub epoch: u64,
    pub params: Vec<(String, Matrix)>,
    pub optimizer: AdamState,
    pub history: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn from_trainer(config: &RunConfig, trainer: &Trainer) -> Self {
        let mut params = Vec::new();
        trainer
            .network
            .visit_params(&mut |name, m| params.push((name.to_string(), m.clone())));
        Self {
            config: config.clone(),
            input_dim: trainer.network.input_dim(),
            outputs: trainer.network.outputs(),
            epoch: trainer.epoch as u64,
            params,
            optimizer: trainer.optimizer.clone(),
            history: trainer.history.clone(),
        }
    }

    /// Rebuilds the network described by the stored config and fills in the
    /// stored parameters. Names and shapes must match exactly.
    pub fn network(&self) -> Result<Network> {
        let spec = self.config.network_spec(self.input_dim, self.outputs);
        let mut net = Network::new(&spec, &mut seeded_rng(0))?;
        self.restore_into(&mut net)?;
        Ok(net)
    }

    pub fn restore_into(&self, network: &mut dyn Parameters) -> Result<()> {
        let stored: BTreeMap<&str, &Matrix> =
            self.params.iter().map(|(n, m)| (n.as_str(), m)).collect();
        let mut expected = Vec::new();
        network.visit_params(&mut |name, m| expected.push((name.to_string(), m.shape())));
        if expected.len() != stored.len() {
            return Err(Error::config(
                "checkpoint",
                format!(
                    "network has {} parameters, checkpoint has {}",
                    expected.len(),
                    stored.len()
                ),
            ));
        }
        for (name, shape) in &expected {
            match stored.get(name.as_str()) {
                None => return Err(Error::config(name.as_str(), "missing from checkpoint")),
                Some(m) if m.shape() != *shape => {
                    return Err(Error::config(
                        name.as_str(),
                        format!(
                            "checkpoint shape {:?} does not match {:?}",
                            m.shape(),
                            shape
                        ),
                    ))
                }
                Some(_) => {}
            }
        }
        network.visit_params_mut(&mut |name, m| {
            m.as_mut_slice().copy_from_slice(stored[name].as_slice());
        });
        Ok(())
    }

    pub fn trainer(&self) -> Result<Trainer> {
        let net = self.network()?;
        Trainer::resume(
            net,
            self.optimizer.clone(),
            self.config.train.clone(),
            self.history.clone(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&MAGIC);
        w.u32(VERSION);
        w.str(&self.config.to_text());
        w.u32(self.input_dim as u32);
        w.u32(self.outputs as u32);
        w.u64(self.epoch);
        let a = &self.optimizer.config;
        for v in [a.lr, a.beta1, a.beta2, a.eps] {
            w.f64(v);
        }
        w.opt_f64(a.clip_norm);
        w.u64(self.optimizer.step);
        w.u32(self.params.len() as u32);
        for (name, m) in &self.params {
            w.str(name);
            w.matrix_shape(m);
            w.values(m);
        }
        w.u32(self.optimizer.moments.len() as u32);
        for (name, mo) in &self.optimizer.moments {
            w.str(name);
            w.matrix_shape(&mo.first);
            w.values(&mo.first);
            w.values(&mo.second);
        }
        w.u32(self.history.len() as u32);
        for h in &self.history {
            w.u64(h.epoch as u64);
            w.f64(h.train_loss);
            w.f64(h.val_loss);
            w.opt_f64(h.val_accuracy);
            w.f64(h.seconds);
        }
        let crc = crc32fast::hash(&w.0);
        w.u32(crc);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::format(0, "not a checkpoint file"));
        }
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::format(bytes.len() as u64, "truncated checkpoint"));
        }
        let body_len = bytes.len() - 4;
        let mut r = Reader {
            bytes: &bytes[..body_len],
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                8,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let stored_crc = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
        if crc32fast::hash(&bytes[..body_len]) != stored_crc {
            return Err(Error::format(
                body_len as u64,
                "checksum mismatch (truncated or corrupted file)",
            ));
        }

        let text_at = r.pos as u64;
        let config = RunConfig::parse(&r.str()?)
            .map_err(|e| Error::format(text_at, format!("stored config is invalid: {e}")))?;
        let input_dim = r.u32()? as usize;
        let outputs = r.u32()? as usize;
        let epoch = r.u64()?;
        let adam = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
            clip_norm: r.opt_f64()?,
        };
        let mut optimizer = AdamState::new(adam);
        optimizer.step = r.u64()?;
        let mut params = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let (rows, cols) = r.shape()?;
            params.push((name, r.matrix(rows, cols)?));
        }
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let (rows, cols) = r.shape()?;
            let first = r.matrix(rows, cols)?;
            let second = r.matrix(rows, cols)?;
            optimizer.moments.insert(name, Moments { first, second });
        }
        let mut history = Vec::new();
        for _ in 0..r.u32()? {
            history.push(EpochMetrics {
                epoch: r.u64()? as usize,
                train_loss: r.f64()?,
                val_loss: r.f64()?,
                val_accuracy: r.opt_f64()?,
                seconds: r.f64()?,
            });
        }
        if r.pos != body_len {
            return Err(Error::format(
                r.pos as u64,
                "trailing bytes before checksum",
            ));
        }
        Ok(Checkpoint {
            config,
            input_dim,
            outputs,
            epoch,
            params,
            optimizer,
            history,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        self.0.push(v.is_some() as u8);
        self.f64(v.unwrap_or(0.0));
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn matrix_shape(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
    }
    fn values(&mut self, m: &Matrix) {
        for v in m.as_slice() {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::format(
                self.pos as u64,
                format!("unexpected end of data reading {n} bytes"),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        let at = self.pos as u64;
        let flag = self.take(1)?[0];
        let v = self.f64()?;
        match flag {
            0 => Ok(None),
            1 => Ok(Some(v)),
            other => Err(Error::format(at, format!("bad option flag {other}"))),
        }
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos as u64;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::format(at, "name is not UTF-8"))
    }
    fn shape(&mut self) -> Result<(usize, usize)> {
        Ok((self.u32()? as usize, self.u32()? as usize))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .filter(|n| {
                n.checked_mul(8)
                    .is_some_and(|b| b <= self.bytes.len() - self.pos)
            })
            .ok_or_else(|| {
                Error::format(
                    self.pos as u64,
                    format!("matrix {rows}x{cols} exceeds file"),
                )
            })?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_vec(rows, cols, data))
    }
}
