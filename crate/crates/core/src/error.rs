use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("node id {node} out of range (graph has {num_nodes} nodes)")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("feature row {row} has {found} columns, expected {expected}")]
    FeatureDimension {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("node {node} is labeled with class {class}, which is in no split")]
    UnknownClass { node: usize, class: usize },

    #[error("class {class} appears in more than one split")]
    OverlappingSplits { class: usize },

    #[error("class {class} has {available} eligible nodes, {required} required")]
    ClassTooSmall {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("{available} classes available, {required} required")]
    NotEnoughClasses { available: usize, required: usize },

    #[error("query size {q_total} is not divisible by the number of classes {n_way}")]
    UnbalancedQuery { q_total: usize, n_way: usize },

    #[error(
        "subgraph node {index} has zero total affinity; use lambda < 1 or a connected subgraph"
    )]
    ZeroDegree { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
