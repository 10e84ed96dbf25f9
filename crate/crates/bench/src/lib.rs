//! Shared fixtures for the kernel benchmarks.

use weakshot_core::episode::sample_test_task;
use weakshot_core::rng::{stream, Purpose};
use weakshot_core::{generate_sbm, Graph, MetaTask, SbmConfig, TrainConfig};

/// The evaluation-scale graph: 15 classes of 40 nodes, 16 features.
pub fn graph() -> Graph {
    generate_sbm(&SbmConfig {
        classes: 15,
        nodes_per_class: 40,
        p_in: 0.2,
        p_out: 0.005,
        feature_dim: 16,
        noise_std: 8.0,
        seed: 0,
        split: [10, 0, 5],
    })
    .expect("valid generator config")
}

pub fn task(g: &Graph, cfg: &TrainConfig, index: u64) -> MetaTask {
    sample_test_task(g, cfg.shape(), &mut stream(cfg.seed, Purpose::TestTask, &[index])).expect("enough test nodes")
}
