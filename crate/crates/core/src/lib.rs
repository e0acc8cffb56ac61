//! Legendre and delayed-memory sequence models with sequential and parallel
//! evaluation paths and a small reverse-mode gradient engine.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layer;
pub mod linalg;
pub mod lmu;
pub mod model;
pub mod optim;
pub mod pdmu;
pub mod rnn;
pub mod spiking;
pub mod ssm;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use layer::{LayerConfig, Mode, Parameters};
pub use linalg::Matrix;
pub use lmu::{lmu_forward, window_reconstruct, LmuLayerParams};
pub use model::{ModelVariant, Network, NetworkSpec, Readout, Target};
pub use pdmu::{pdmu_forward, PdmuLayerParams, Variant};
pub use tape::{Gradients, Tape};
