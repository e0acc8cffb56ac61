//! Vocabulary shared by the memory layers.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::ssm::{pade_matrices, zoh_discretize, ScanConfig, ScanEngine, DEFAULT_FFT_THRESHOLD};
use crate::tape::Activation;

/// How a layer walks the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// One step at a time with O(1) state, as a deployed recurrent cell.
    Sequential,
    /// Whole-sequence convolution over the frozen memory kernel.
    Parallel,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sequential => "sequential",
            Mode::Parallel => "parallel",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seq" | "sequential" => Ok(Mode::Sequential),
            "par" | "parallel" => Ok(Mode::Parallel),
            other => Err(Error::UnsupportedMode(format!("unknown mode `{other}`"))),
        }
    }
}

/// Shapes and fixed dynamics of one memory layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Order of the Legendre memory; `None` means `hidden_dim`.
    pub memory_order: Option<usize>,
    /// Independent scalar memory channels, each with its own input row.
    pub memory_channels: usize,
    /// Number of delay gates (ignored by the plain LMU).
    pub delays: usize,
    /// Memory window in time units; `None` means `memory_order * dt`.
    pub theta: Option<f64>,
    /// Gate-system window; `None` means `delays * dt`.
    pub gate_theta: Option<f64>,
    pub dt: f64,
    pub input_activation: Activation,
    pub output_activation: Activation,
    pub fft_threshold: usize,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden_dim: 16,
            memory_order: None,
            memory_channels: 1,
            delays: 5,
            theta: None,
            gate_theta: None,
            dt: 1.0,
            input_activation: Activation::Relu,
            output_activation: Activation::Relu,
            fft_threshold: DEFAULT_FFT_THRESHOLD,
        }
    }
}

impl LayerConfig {
    pub fn order(&self) -> usize {
        self.memory_order.unwrap_or(self.hidden_dim)
    }

    pub fn memory_theta(&self) -> f64 {
        self.theta.unwrap_or(self.order() as f64 * self.dt)
    }

    pub fn gate_window(&self) -> f64 {
        self.gate_theta.unwrap_or(self.delays as f64 * self.dt)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("memory_order", self.order()),
            ("memory_channels", self.memory_channels),
            ("fft_threshold", self.fft_threshold),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.memory_theta() > 0.0 && self.memory_theta().is_finite()) {
            return Err(Error::invalid("memory window must be positive"));
        }
        Ok(())
    }

    pub(crate) fn validate_gated(&self) -> Result<()> {
        self.validate()?;
        if self.delays == 0 || self.delays >= 32 {
            return Err(Error::invalid(format!(
                "delay count must lie in 1..32, got {}",
                self.delays
            )));
        }
        if !(self.gate_window() > 0.0 && self.gate_window().is_finite()) {
            return Err(Error::invalid("gate window must be positive"));
        }
        Ok(())
    }
}

/// Discretized Legendre system of `order` with window `theta`, wrapped for scanning.
pub fn legendre_memory(
    order: usize,
    theta: f64,
    dt: f64,
    fft_threshold: usize,
) -> Result<Arc<ScanEngine>> {
    let sys = pade_matrices(order)?.time_scaled(theta)?;
    let discrete = zoh_discretize(&sys, dt)?;
    Ok(Arc::new(ScanEngine::with_config(
        Arc::new(discrete),
        ScanConfig { fft_threshold },
    )))
}

/// Named access to a model's trainable matrices, in a fixed order.
pub trait Parameters {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, m| n += m.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name.to_string()));
        names
    }
}

pub(crate) fn check_input(x: &Matrix, input_dim: usize) -> Result<()> {
    if x.cols() != input_dim {
        return Err(Error::invalid(format!(
            "input has {} features, layer expects {input_dim}",
            x.cols()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::invalid("empty input sequence"));
    }
    if !x.is_finite() {
        return Err(Error::invalid("input contains non-finite values"));
    }
    Ok(())
}

pub(crate) fn check_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::invalid(format!(
            "{name} has shape {:?}, expected ({rows}, {cols})",
            m.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing() {
        assert_eq!("seq".parse::<Mode>().unwrap(), Mode::Sequential);
        assert_eq!("parallel".parse::<Mode>().unwrap(), Mode::Parallel);
        assert!(matches!(
            "fast".parse::<Mode>(),
            Err(Error::UnsupportedMode(_))
        ));
    }

    #[test]
    fn defaults_follow_hidden_size() {
        let cfg = LayerConfig {
            hidden_dim: 12,
            ..LayerConfig::default()
        };
        assert_eq!(cfg.order(), 12);
        assert_eq!(cfg.memory_theta(), 12.0);
        assert_eq!(cfg.gate_window(), 5.0);
    }

    #[test]
    fn rejects_bad_delays() {
        let cfg = LayerConfig {
            delays: 0,
            ..LayerConfig::default()
        };
        assert!(cfg.validate().is_ok());
        assert!(cfg.validate_gated().is_err());
    }
}
