//! Stochastic block model generator with class-mean-plus-noise features.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ClassSplits, Graph};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmConfig {
    pub classes: usize,
    pub nodes_per_class: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Must be at least `classes`; class `c` has mean vector `e_c`.
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Number of classes assigned to train, validation and test.
    pub split: [usize; 3],
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            classes: 15,
            nodes_per_class: 40,
            p_in: 0.1,
            p_out: 0.005,
            feature_dim: 16,
            noise_std: 0.25,
            seed: 0,
            split: [10, 0, 5],
        }
    }
}

impl SbmConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.classes == 0 || self.nodes_per_class == 0 {
            return bad("classes and nodes_per_class must be positive");
        }
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return bad("require 0 <= p_out <= p_in <= 1");
        }
        if self.feature_dim < self.classes {
            return bad("feature_dim must be at least the number of classes");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be a finite non-negative real");
        }
        if self.split.iter().sum::<usize>() != self.classes {
            return bad("split counts must sum to the number of classes");
        }
        Ok(())
    }
}

/// Classes are dealt to train, val, test in turn, skipping splits whose
/// quota is full.
fn round_robin_splits(classes: usize, quota: [usize; 3]) -> ClassSplits {
    let mut lists: [Vec<usize>; 3] = Default::default();
    let mut slot = 0;
    for c in 0..classes {
        while lists[slot].len() >= quota[slot] {
            slot = (slot + 1) % 3;
        }
        lists[slot].push(c);
        slot = (slot + 1) % 3;
    }
    let [train, val, test] = lists;
    ClassSplits { train, val, test }
}

/// Nodes are laid out class-major: node `i` belongs to block
/// `i / nodes_per_class`.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.classes * cfg.nodes_per_class;
    let block = |i: usize| i / cfg.nodes_per_class;
    let mut rng = stream(cfg.seed, Purpose::Generator, &[0]);

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block(i) == block(j) { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut features = Array2::zeros((n, cfg.feature_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            *v = noise.sample(&mut rng);
        }
        row[block(i)] += 1.0;
    }

    let labels = (0..n).map(|i| Some(block(i))).collect();
    Graph::new(features, edges, labels, round_robin_splits(cfg.classes, cfg.split))
}
