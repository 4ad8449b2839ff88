//! Shared fixtures of the pipeline benchmarks.

use discocal_core::synth::{generate_dataset, DatasetConfig, SyntheticImage};

/// Noisy synthetic views of the default scenario.
pub fn views(count: usize) -> Vec<SyntheticImage> {
    generate_dataset(&DatasetConfig {
        images: count,
        ..DatasetConfig::default()
    })
    .expect("default scenario renders")
}
