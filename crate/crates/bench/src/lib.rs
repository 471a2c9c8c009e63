//! Shared fixtures for the benchmarks.

use kalm::model::{prepare_synthetic, SyntheticData, TrainConfig};

/// Benchmark-sized configuration: default depth and heads at width 64.
pub fn bench_config() -> TrainConfig {
    TrainConfig {
        d_model: 64,
        kge_dim: 32,
        transe_epochs: 50,
        n_docs: 40,
        ..TrainConfig::default()
    }
}

pub fn corpus(cfg: &TrainConfig) -> SyntheticData {
    prepare_synthetic(cfg).expect("synthetic corpus builds")
}
