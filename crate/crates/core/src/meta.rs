//! Episodic optimization: per-task augmentation, inner fine-tuning, the
//! two-rate first-order meta-update, and meta-test evaluation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::episode::{sample_test_task, sample_train_task, sample_val_task, MetaTask, WeakLabelPool};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ib::{loss_total, predict, EgoCache, LossSettings, StepKey};
use crate::nn::{Encoder, ParamSet, Tensors, Theta};
use crate::poisson::{argmax, propagate, propagate_with, AugmentedSupport, Scope};
use crate::rng::{stream, Purpose, Rng};

/// Step tag of the query-loss evaluation; fine-tuning steps use `0..T`.
const QUERY_STEP: u64 = u64::MAX;
/// Episode namespaces keep evaluation streams apart from training streams.
const TEST_NAMESPACE: u64 = 1 << 62;
const VAL_NAMESPACE: u64 = 1 << 61;

/// One row of the episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub support_size: usize,
    pub pseudo_precision: Option<f64>,
    pub l_y: f64,
    pub l_d: f64,
    pub l: f64,
    pub query_acc: f64,
}

impl EpisodeLog {
    pub const CSV_HEADER: &'static str = "episode,support_size,pseudo_precision,l_y,l_d,l,query_acc";

    pub fn csv_row(&self) -> String {
        let precision = self.pseudo_precision.map(|p| p.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.episode, self.support_size, precision, self.l_y, self.l_d, self.l, self.query_acc
        )
    }
}

pub fn episode_csv(logs: &[EpisodeLog]) -> String {
    let mut out = String::from(EpisodeLog::CSV_HEADER);
    out.push('\n');
    for row in logs {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Support set for one task: augmented with pseudo-labels unless the
/// ablation disables them or propagation is impossible because a subgraph
/// node has zero total affinity. Returns the pseudo-label precision when
/// any were selected.
pub fn support_for(
    g: &Graph,
    task: &MetaTask,
    cfg: &TrainConfig,
    scope: &Scope,
    rng: &mut Rng,
) -> Result<(AugmentedSupport, Option<f64>)> {
    if !cfg.ablation.uses_pseudo_labels() {
        return Ok((AugmentedSupport::plain(task), None));
    }
    match propagate(g, task, &cfg.poisson(), scope, rng) {
        Ok(prop) => Ok((prop.augmented_support(task), prop.precision(g, task))),
        Err(Error::ZeroDegree { index }) => {
            log::warn!("subgraph row {index} has zero degree; task proceeds without pseudo-labels");
            Ok((AugmentedSupport::plain(task), None))
        }
        Err(e) => Err(e),
    }
}

/// `T` full-batch gradient steps on the support set, updating θ only. The
/// step is `alpha` times the gradient of the summed loss, scaled by
/// `cfg.reduction`.
/// Returns a new θ; the inputs are untouched.
pub fn fine_tune(
    theta0: &Theta,
    phi: &Encoder,
    cache: &EgoCache,
    support: &[(usize, usize)],
    cfg: &TrainConfig,
    seed: u64,
    episode: u64,
) -> Result<Theta> {
    // φ is frozen while fine-tuning.
    let settings = LossSettings {
        phi_grad: false,
        ..cfg.loss_settings(true)
    };
    let rate = cfg.alpha * cfg.reduction.factor(support.len());
    let mut theta = theta0.clone();
    for step in 0..cfg.t {
        let key = StepKey {
            seed,
            episode,
            step: step as u64,
        };
        let out = loss_total(cache, support, &theta, phi, &settings, key)
            .map_err(|e| Error::NonFinite(format!("fine-tuning step {step} of episode {episode}: {e}")))?;
        theta.scaled_add(-rate, &out.grad_theta);
    }
    Ok(theta)
}

fn accuracy(cache: &EgoCache, query: &[(usize, usize)], theta: &Theta) -> Result<f64> {
    if query.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for &(node, label) in query {
        if predict(cache, node, theta)? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / query.len() as f64)
}

fn task_cache(g: &Graph, support: &AugmentedSupport, task: &MetaTask) -> Result<EgoCache> {
    EgoCache::build(g, support.entries.iter().map(|e| e.node).chain(task.query_nodes()))
}

/// One meta-training episode. Either both parameter groups are updated or,
/// on error, neither is.
pub fn meta_step(
    params: &mut ParamSet,
    g: &Graph,
    task: &MetaTask,
    cfg: &TrainConfig,
    scope: &Scope,
    episode: usize,
    rng: &mut Rng,
) -> Result<EpisodeLog> {
    let ep = episode as u64;
    let (support, precision) = support_for(g, task, cfg, scope, rng)?;
    let cache = task_cache(g, &support, task)?;
    let theta_t = fine_tune(&params.theta, &params.phi, &cache, &support.labeled_nodes(), cfg, cfg.seed, ep)?;

    let key = StepKey {
        seed: cfg.seed,
        episode: ep,
        step: QUERY_STEP,
    };
    let out = loss_total(&cache, &task.query, &theta_t, &params.phi, &cfg.loss_settings(true), key)?;
    let query_acc = accuracy(&cache, &task.query, &theta_t)?;

    let factor = cfg.reduction.factor(task.query.len());
    params.theta.scaled_add(-cfg.beta1 * factor, &out.grad_theta);
    if cfg.ablation.uses_ib() {
        params.phi.scaled_add(-cfg.beta2 * factor, &out.grad_phi);
    }
    Ok(EpisodeLog {
        episode,
        support_size: support.len(),
        pseudo_precision: precision,
        l_y: out.l_y,
        l_d: out.l_d,
        l: out.total,
        query_acc,
    })
}

/// Per-task evaluation results with their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `per_task`.
    pub std: f64,
    pub seed: u64,
    pub config: TrainConfig,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn from_accuracies(per_task: Vec<f64>, cfg: &TrainConfig, wall_clock_secs: f64) -> Self {
        let (mean, std) = mean_std(&per_task);
        Self {
            per_task,
            mean,
            std,
            seed: cfg.seed,
            config: cfg.clone(),
            wall_clock_secs,
        }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Val,
    Test,
}

fn eval_task(g: &Graph, params: &ParamSet, cfg: &TrainConfig, split: Split, index: usize) -> Result<f64> {
    let (namespace, purpose) = match split {
        Split::Test => (TEST_NAMESPACE, Purpose::TestTask),
        Split::Val => (VAL_NAMESPACE, Purpose::ValTask),
    };
    let episode = namespace | index as u64;
    let mut task_rng = stream(cfg.seed, purpose, &[index as u64]);
    let task = match split {
        Split::Test => sample_test_task(g, cfg.shape(), &mut task_rng)?,
        Split::Val => sample_val_task(g, cfg.shape(), &mut task_rng)?,
    };
    let mut sub_rng = stream(cfg.seed, Purpose::Subgraph, &[episode]);
    let (support, _) = support_for(g, &task, cfg, &Scope::AllNodes, &mut sub_rng)?;
    let cache = task_cache(g, &support, &task)?;
    let theta_t = fine_tune(&params.theta, &params.phi, &cache, &support.labeled_nodes(), cfg, cfg.seed, episode)?;
    accuracy(&cache, &task.query, &theta_t)
}

fn evaluate_split(g: &Graph, params: &ParamSet, cfg: &TrainConfig, split: Split, tasks: usize) -> Result<EvalReport> {
    cfg.validate()?;
    let start = Instant::now();
    let run = |i: usize| eval_task(g, params, cfg, split, i);
    let per_task: Vec<f64> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| (0..tasks).into_par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        (0..tasks).map(run).collect::<Result<Vec<_>>>()?
    };
    Ok(EvalReport::from_accuracies(per_task, cfg, start.elapsed().as_secs_f64()))
}

/// Meta-test evaluation over `cfg.t_test` tasks. Every task fine-tunes its
/// own copy of θ, so `params` is never modified. Results are independent of
/// `cfg.workers`.
pub fn evaluate(g: &Graph, params: &ParamSet, cfg: &TrainConfig) -> Result<EvalReport> {
    evaluate_split(g, params, cfg, Split::Test, cfg.t_test)
}

/// Same protocol as [`evaluate`] on the validation classes.
pub fn evaluate_validation(g: &Graph, params: &ParamSet, cfg: &TrainConfig, tasks: usize) -> Result<EvalReport> {
    evaluate_split(g, params, cfg, Split::Val, tasks)
}

/// The meta-test task with index `index` and its propagation, drawn from
/// the same streams that [`evaluate`] uses for that task.
pub fn test_task_propagation(g: &Graph, cfg: &TrainConfig, index: usize) -> Result<(MetaTask, crate::poisson::Propagation)> {
    cfg.validate()?;
    let task = sample_test_task(g, cfg.shape(), &mut stream(cfg.seed, Purpose::TestTask, &[index as u64]))?;
    let mut sub_rng = stream(cfg.seed, Purpose::Subgraph, &[TEST_NAMESPACE | index as u64]);
    let prop = propagate(g, &task, &cfg.poisson(), &Scope::AllNodes, &mut sub_rng)?;
    Ok((task, prop))
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub logs: Vec<EpisodeLog>,
    /// Episodes skipped because sampling or fine-tuning failed.
    pub skipped: Vec<(usize, String)>,
    /// `(episodes completed, report)` for each validation pass.
    pub validation: Vec<(usize, EvalReport)>,
}

/// Sequential meta-training from a seeded initialization. `on_checkpoint`
/// receives the parameters after every `checkpoint_every` episodes and after
/// the final one.
pub fn train<F>(g: &Graph, cfg: &TrainConfig, mut on_checkpoint: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ParamSet) -> Result<()>,
{
    cfg.validate()?;
    let params = ParamSet::init(cfg.dims(g.feature_dim()), cfg.seed);
    train_from(g, cfg, params, &mut on_checkpoint)
}

pub fn train_from<F>(g: &Graph, cfg: &TrainConfig, mut params: ParamSet, mut on_checkpoint: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ParamSet) -> Result<()>,
{
    cfg.validate()?;
    let pool = WeakLabelPool::build(g, cfg.labels_per_class, cfg.seed)?;
    let scope = cfg.train_scope(g);
    let mut logs = Vec::with_capacity(cfg.t_train);
    let mut skipped = Vec::new();
    let mut validation = Vec::new();

    for episode in 0..cfg.t_train {
        let ep = episode as u64;
        let step = sample_train_task(&pool, cfg.shape(), &mut stream(cfg.seed, Purpose::TrainTask, &[ep])).and_then(
            |task| meta_step(&mut params, g, &task, cfg, &scope, episode, &mut stream(cfg.seed, Purpose::Subgraph, &[ep])),
        );
        match step {
            Ok(row) => logs.push(row),
            Err(e) => {
                log::warn!("episode {episode} skipped: {e}");
                skipped.push((episode, e.to_string()));
            }
        }
        if !params.all_finite() {
            return Err(Error::NonFinite(format!("parameters after episode {episode}")));
        }
        let done = episode + 1;
        if cfg.val_every > 0 && done % cfg.val_every == 0 && !g.splits().val.is_empty() {
            let report = evaluate_validation(g, &params, cfg, cfg.val_tasks)?;
            log::info!("episode {done}: validation accuracy {:.4} ± {:.4}", report.mean, report.std);
            validation.push((done, report));
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.t_train {
            on_checkpoint(done, &params)?;
        }
    }
    on_checkpoint(cfg.t_train, &params)?;
    Ok(TrainOutcome {
        params,
        logs,
        skipped,
        validation,
    })
}

/// Parameters whose encoder and classifier are identically zero. The encoder
/// output is then zero for every node and stays zero under fine-tuning, so
/// every query node in a task receives the same prediction.
pub fn constant_logit_params(dims: crate::nn::Dims, seed: u64) -> ParamSet {
    let mut p = ParamSet::init(dims, seed);
    p.theta.encoder = Encoder::zeros(dims.d, dims.h);
    p.theta.classifier = crate::nn::Linear::zeros(dims.h, dims.n_way);
    p
}

/// Classifies query nodes directly by the argmax of the propagated label
/// matrix, with the query nodes injected as unlabeled subgraph members.
pub fn poisson_only_baseline(g: &Graph, task: &MetaTask, cfg: &TrainConfig, rng: &mut Rng) -> Result<f64> {
    let query = task.query_nodes();
    let prop = propagate_with(g, task, &cfg.poisson(), &Scope::AllNodes, &query, rng)?;
    let ids = &prop.subgraph.node_ids;
    let mut hits = 0usize;
    for &(node, label) in &task.query {
        let row = ids
            .iter()
            .position(|&n| n == node)
            .ok_or_else(|| Error::Shape(format!("query node {node} missing from subgraph")))?;
        if argmax(prop.u.row(row).iter().copied()) == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / task.query.len().max(1) as f64)
}
