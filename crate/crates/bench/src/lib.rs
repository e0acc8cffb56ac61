//! Fixtures shared by the benchmarks.

use dlssm::data::{delay_recall_task, SequenceBatch};
use dlssm::init::{kaiming_uniform, seeded_rng};
use dlssm::spiking::LifConfig;
use dlssm::ssm::{pade_matrices, zoh_discretize, DiscreteSystem};
use dlssm::tape::Activation;
use dlssm::{LayerConfig, ModelVariant, Network, NetworkSpec, Readout};

/// Legendre system of `order` with a window of `order` steps.
pub fn legendre_system(order: usize) -> DiscreteSystem {
    let sys = pade_matrices(order)
        .and_then(|s| s.time_scaled(order as f64))
        .expect("valid order");
    zoh_discretize(&sys, 1.0).expect("finite discretization")
}

pub fn signal(len: usize, seed: u64) -> Vec<f64> {
    kaiming_uniform(len, 1, 1, &mut seeded_rng(seed))
        .as_slice()
        .to_vec()
}

/// Single-layer per-step regression network on scalar input.
pub fn network(variant: ModelVariant, hidden: usize, delays: usize, seed: u64) -> Network {
    let spec = NetworkSpec {
        variant,
        layer: LayerConfig {
            input_dim: 1,
            hidden_dim: hidden,
            delays,
            input_activation: Activation::Identity,
            ..LayerConfig::default()
        },
        layers: 1,
        outputs: 1,
        readout: Readout::PerStep,
        lif: LifConfig::default(),
        encoder_channels: None,
    };
    Network::new(&spec, &mut seeded_rng(seed)).expect("valid spec")
}

pub fn recall_batch(batch: usize, len: usize) -> SequenceBatch {
    delay_recall_task(batch, len, 4.min(len - 1), 0).expect("delay fits")
}
