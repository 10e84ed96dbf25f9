use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::episode::TaskShape;
use crate::error::{Error, Result};
use crate::ib::LossSettings;
use crate::nn::Dims;
use crate::poisson::{PoissonConfig, Scope, Sparsify};
use crate::graph::Graph;

/// Which of the two components run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Pseudo-labeling and information-bottleneck fine-tuning.
    Full,
    /// Fine-tune on the given support set only.
    NoPseudo,
    /// Cross-entropy fine-tuning; the target encoder is never used.
    NoIb,
    Neither,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [Self::Full, Self::NoPseudo, Self::NoIb, Self::Neither];

    pub fn uses_pseudo_labels(self) -> bool {
        matches!(self, Self::Full | Self::NoIb)
    }

    pub fn uses_ib(self) -> bool {
        matches!(self, Self::Full | Self::NoPseudo)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoPseudo => "no_pseudo",
            Self::NoIb => "no_ib",
            Self::Neither => "neither",
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

/// How per-node loss terms are combined into an optimizer step. Losses are
/// always reported as sums; `Mean` divides the summed gradient by the
/// number of nodes before applying a learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Mean,
    Sum,
}

impl Reduction {
    /// Multiplier applied to a summed gradient over `n` nodes.
    pub fn factor(self, n: usize) -> f64 {
        match self {
            Self::Mean if n > 0 => 1.0 / n as f64,
            _ => 1.0,
        }
    }
}

/// Every hyper-parameter of a run. Defaults are the reference settings:
/// 5-way 3-shot, |Q| = 10, R = 10, eta = 100, lambda = 0.5, T_l = 10, M = 20,
/// T = 40, alpha = 0.1, beta = 1, beta1 = beta2 = 0.005, gamma = 0.1,
/// dropout 0.5, hidden sizes 64 and 128, 5000 training and 500 test tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_total: usize,
    pub labels_per_class: usize,

    pub r: usize,
    pub eta: f64,
    pub lambda: f64,
    pub t_l: usize,
    pub m: usize,
    pub normalize_features: bool,
    pub sparsify: Option<Sparsify>,

    /// Fine-tuning steps.
    pub t: usize,
    pub alpha: f64,
    pub beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub reduction: Reduction,
    pub dropout: f64,
    pub target_dropout: bool,
    pub hidden: usize,
    pub predictor_hidden: usize,

    pub t_train: usize,
    pub t_test: usize,
    pub seed: u64,
    pub ablation: AblationMode,
    /// Let meta-training subgraphs include nodes of validation and test
    /// classes.
    pub train_scope_all_nodes: bool,
    /// Evaluate on validation classes every this many episodes (0 = never).
    pub val_every: usize,
    pub val_tasks: usize,
    /// Emit a checkpoint every this many episodes (0 = final only).
    pub checkpoint_every: usize,
    /// Evaluation worker threads.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 3,
            q_total: 10,
            labels_per_class: 5,
            r: 10,
            eta: 100.0,
            lambda: 0.5,
            t_l: 10,
            m: 20,
            normalize_features: false,
            sparsify: None,
            t: 40,
            alpha: 0.1,
            beta: 1.0,
            beta1: 0.005,
            beta2: 0.005,
            gamma: 0.1,
            reduction: Reduction::Mean,
            dropout: 0.5,
            target_dropout: true,
            hidden: 64,
            predictor_hidden: 128,
            t_train: 5000,
            t_test: 500,
            seed: 0,
            ablation: AblationMode::Full,
            train_scope_all_nodes: false,
            val_every: 0,
            val_tasks: 50,
            checkpoint_every: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_way == 0 || self.k_shot == 0 {
            return fail("n_way and k_shot must be positive".into());
        }
        if self.q_total % self.n_way != 0 {
            return fail(format!("q_total {} must be a multiple of n_way {}", self.q_total, self.n_way));
        }
        if self.hidden == 0 || self.predictor_hidden == 0 {
            return fail("hidden sizes must be positive".into());
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a finite non-negative real"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        self.poisson().validate()
    }

    pub fn shape(&self) -> TaskShape {
        TaskShape {
            n_way: self.n_way,
            k_shot: self.k_shot,
            q_total: self.q_total,
        }
    }

    pub fn poisson(&self) -> PoissonConfig {
        PoissonConfig {
            r: self.r,
            eta: self.eta,
            lambda: self.lambda,
            t_l: self.t_l,
            m: self.m,
            normalize_features: self.normalize_features,
            sparsify: self.sparsify,
        }
    }

    /// Loss settings for fine-tuning and the query loss. Without the
    /// bottleneck term `beta` is forced to zero.
    pub fn loss_settings(&self, train_mode: bool) -> LossSettings {
        LossSettings {
            beta: if self.ablation.uses_ib() { self.beta } else { 0.0 },
            gamma: self.gamma,
            dropout: self.dropout,
            target_dropout: self.target_dropout,
            train_mode,
            phi_grad: true,
        }
    }

    pub fn dims(&self, feature_dim: usize) -> Dims {
        Dims {
            d: feature_dim,
            h: self.hidden,
            h1: self.predictor_hidden,
            n_way: self.n_way,
        }
    }

    /// Unlabeled-node scope for meta-training subgraphs.
    pub fn train_scope(&self, g: &Graph) -> Scope {
        if self.train_scope_all_nodes {
            Scope::AllNodes
        } else {
            let held_out: HashSet<usize> = g.splits().val.iter().chain(&g.splits().test).copied().collect();
            Scope::ExcludeClasses(held_out)
        }
    }
}
