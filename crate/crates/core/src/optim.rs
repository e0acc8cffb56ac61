//! Adam with bias correction and optional global-norm clipping.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layer::Parameters;
use crate::linalg::Matrix;
use crate::tape::Gradients;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the whole gradient when its global norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// First and second moments of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Matrix,
    pub second: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update. Parameters without a gradient entry are treated
    /// as having a zero gradient. Nothing is modified if any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut dyn Parameters, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: name.to_string(),
                });
            }
        }
        let mut shape_error = None;
        params.visit_params(&mut |name, p| {
            if let Some(g) = grads.get(name) {
                if g.shape() != p.shape() && shape_error.is_none() {
                    shape_error = Some(Error::invalid(format!(
                        "gradient for `{name}` has shape {:?}, parameter has {:?}",
                        g.shape(),
                        p.shape()
                    )));
                }
            }
        });
        if let Some(e) = shape_error {
            return Err(e);
        }

        let cfg = self.config;
        let scale = match cfg.clip_norm {
            Some(limit) => {
                let norm = grads.global_norm();
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let moments = &mut self.moments;
        params.visit_params_mut(&mut |name, p| {
            let entry = moments.entry(name.to_string()).or_insert_with(|| Moments {
                first: Matrix::zeros(p.rows(), p.cols()),
                second: Matrix::zeros(p.rows(), p.cols()),
            });
            let g = grads.get(name);
            let first = entry.first.as_mut_slice();
            let second = entry.second.as_mut_slice();
            for (i, w) in p.as_mut_slice().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g.as_slice()[i] * scale);
                first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * gi;
                second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = first[i] / c1;
                let v_hat = second[i] / c2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        });
        Ok(())
    }
}
