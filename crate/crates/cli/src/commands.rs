use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use log::info;
use serde::Serialize;
use weakshot_core::audit::gradient_audit;
use weakshot_core::graph::{dump_graph, GraphFiles};
use weakshot_core::meta::{episode_csv, mean_std, test_task_propagation};
use weakshot_core::nn::Tensors;
use weakshot_core::{
    evaluate, generate_sbm, load_checkpoint, load_graph_dir, save_checkpoint, train as meta_train, AblationMode, Graph,
    MetaTask, SbmConfig, TrainConfig,
};

use crate::config::{usage, RunConfig};
use crate::ConfigArgs;

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 15)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    nodes_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0.25)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Classes assigned to meta-train, validation and meta-test.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 0, 5])]
    split: Vec<usize>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Coordinates probed per tensor (all of them for smaller tensors).
    #[arg(long, default_value_t = 200)]
    coords: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Also write gradcheck.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct SeedArgs {
    /// Seeds to average over; defaults to the config seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

impl SeedArgs {
    fn resolve(&self, cfg: &TrainConfig) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![cfg.seed]
        } else {
            self.seeds.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Gamma,
    Beta,
    Lambda,
    R,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Self::Gamma => "gamma",
            Self::Beta => "beta",
            Self::Lambda => "lambda",
            Self::R => "r",
        }
    }

    fn apply(self, cfg: &mut TrainConfig, value: f64) -> anyhow::Result<()> {
        match self {
            Self::Gamma => cfg.gamma = value,
            Self::Beta => cfg.beta = value,
            Self::Lambda => cfg.lambda = value,
            Self::R => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(usage(format!("r must be a non-negative integer, got {value}")));
                }
                cfg.r = value as usize;
            }
        }
        cfg.validate().map_err(|e| usage(format!("{}={value}: {e}", self.name())))
    }
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum)]
    axis: Axis,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[command(flatten)]
    seeds: SeedArgs,
}

fn load_data(cfg: &RunConfig) -> anyhow::Result<Graph> {
    load_graph_dir(&cfg.data).with_context(|| format!("loading dataset {}", cfg.data.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

pub fn checkpoint_path(out_dir: &Path, episode: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("episode-{episode:06}.ckpt"))
}

pub fn gen_data(args: &GenDataArgs) -> anyhow::Result<()> {
    let &[train, val, test] = args.split.as_slice() else {
        return Err(usage(format!("--split expects three counts, got {:?}", args.split)));
    };
    let sbm = SbmConfig {
        classes: args.classes,
        nodes_per_class: args.nodes_per_class,
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.feature_dim,
        noise_std: args.noise_std,
        seed: args.seed,
        split: [train, val, test],
    };
    let g = generate_sbm(&sbm).map_err(|e| usage(e.to_string()))?;
    dump_graph(&g, &GraphFiles::in_dir(&args.out)).with_context(|| format!("writing dataset to {}", args.out.display()))?;
    let s = g.splits();
    println!(
        "nodes {} edges {} feature_dim {} classes train {} val {} test {}",
        g.num_nodes(),
        g.num_edges(),
        g.feature_dim(),
        s.train.len(),
        s.val.len(),
        s.test.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct Skipped<'a> {
    episode: usize,
    reason: &'a str,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    episodes: usize,
    completed: usize,
    skipped: Vec<Skipped<'a>>,
    final_checkpoint: PathBuf,
    param_checksum: String,
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let g = load_data(cfg)?;
    cfg.write_beside(&cfg.out_dir)?;
    fs::create_dir_all(cfg.out_dir.join("checkpoints"))?;
    let out = meta_train(&g, &cfg.train, |episode, params| {
        let path = checkpoint_path(&cfg.out_dir, episode);
        info!("checkpoint {}", path.display());
        save_checkpoint(params, path)
    })?;
    write(&cfg.out_dir.join("episodes.csv"), episode_csv(&out.logs))?;
    if !out.validation.is_empty() {
        let mut csv = String::from("episode,mean,std\n");
        for (ep, r) in &out.validation {
            writeln!(csv, "{ep},{},{}", r.mean, r.std).unwrap();
        }
        write(&cfg.out_dir.join("validation.csv"), csv)?;
    }
    let summary = TrainSummary {
        episodes: cfg.train.t_train,
        completed: out.logs.len(),
        skipped: out
            .skipped
            .iter()
            .map(|(episode, reason)| Skipped { episode: *episode, reason })
            .collect(),
        final_checkpoint: checkpoint_path(&cfg.out_dir, cfg.train.t_train),
        param_checksum: format!("{:016x}", out.params.checksum()),
    };
    write(&cfg.out_dir.join("train_summary.json"), to_json(&summary))?;
    println!(
        "trained {} episodes ({} skipped); outputs in {}",
        summary.completed,
        summary.skipped.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path) -> anyhow::Result<()> {
    let g = load_data(cfg)?;
    let params = load_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let want = cfg.train.dims(g.feature_dim());
    if params.dims() != want {
        return Err(usage(format!(
            "checkpoint dimensions {:?} do not match dataset and config {:?}",
            params.dims(),
            want
        )));
    }
    cfg.write_beside(&cfg.out_dir)?;
    let report = evaluate(&g, &params, &cfg.train)?;
    write(&cfg.out_dir.join("eval.json"), to_json(&report))?;
    println!("accuracy {:.4} ± {:.4} over {} tasks", report.mean, report.std, report.per_task.len());
    Ok(())
}

#[derive(Serialize)]
struct PropagationDump<'a> {
    task_index: usize,
    task: &'a MetaTask,
    node_ids: &'a [usize],
    num_labeled: usize,
    u: Vec<Vec<f64>>,
    entropy: &'a [f64],
    pseudo_labels: &'a [weakshot_core::poisson::PseudoLabel],
    precision: Option<f64>,
}

pub fn propagate(cfg: &RunConfig, task_index: usize) -> anyhow::Result<()> {
    let g = load_data(cfg)?;
    let (task, prop) = test_task_propagation(&g, &cfg.train, task_index)?;
    let precision = prop.precision(&g, &task);
    let dump = PropagationDump {
        task_index,
        task: &task,
        node_ids: &prop.subgraph.node_ids,
        num_labeled: prop.subgraph.num_labeled,
        u: prop.u.rows().into_iter().map(|r| r.to_vec()).collect(),
        entropy: &prop.entropy,
        pseudo_labels: &prop.pseudo,
        precision,
    };
    cfg.write_beside(&cfg.out_dir)?;
    write(&cfg.out_dir.join("propagate.json"), to_json(&dump))?;
    println!(
        "subgraph {} nodes, {} pseudo-labels, precision {}",
        prop.subgraph.len(),
        prop.pseudo.len(),
        precision.map_or("n/a".to_string(), |p| format!("{p:.4}"))
    );
    Ok(())
}

/// Returns whether every loss path is within tolerance.
pub fn gradcheck(args: &GradcheckArgs) -> anyhow::Result<bool> {
    let audit = gradient_audit(args.seed, args.eps, args.coords)?;
    for check in &audit.checks {
        println!("{:<4} max relative error {:.3e}", check.loss, check.report.max_rel_error);
        for t in &check.report.tensors {
            println!("     {:<30} {:>6} coords {:.3e}", t.name, t.checked, t.max_rel_error);
        }
    }
    if let Some(dir) = &args.out_dir {
        write(&dir.join("gradcheck.json"), to_json(&audit))?;
    }
    let ok = audit.max_rel_error() < args.tol;
    println!("{} (tolerance {:e})", if ok { "ok" } else { "FAILED" }, args.tol);
    Ok(ok)
}

/// Trains from scratch under `cfg` and returns the meta-test mean accuracy.
fn train_and_evaluate(g: &Graph, cfg: &TrainConfig) -> anyhow::Result<f64> {
    let out = meta_train(g, cfg, |_, _| Ok(()))?;
    Ok(evaluate(g, &out.params, cfg)?.mean)
}

fn seed_columns(seeds: &[u64]) -> String {
    seeds.iter().map(|s| format!(",seed_{s}")).collect()
}

pub fn ablate(cfg: &RunConfig, seeds: &SeedArgs) -> anyhow::Result<()> {
    let g = load_data(cfg)?;
    let seeds = seeds.resolve(&cfg.train);
    cfg.write_beside(&cfg.out_dir)?;
    let mut csv = format!("mode,mean,std{}\n", seed_columns(&seeds));
    for mode in AblationMode::ALL {
        let mut accs = Vec::with_capacity(seeds.len());
        for &seed in &seeds {
            let run = TrainConfig {
                ablation: mode,
                seed,
                ..cfg.train.clone()
            };
            accs.push(train_and_evaluate(&g, &run)?);
        }
        let (mean, std) = mean_std(&accs);
        println!("{:<10} {mean:.4} ± {std:.4}", mode.name());
        write!(csv, "{},{mean},{std}", mode.name()).unwrap();
        for a in &accs {
            write!(csv, ",{a}").unwrap();
        }
        csv.push('\n');
    }
    write(&cfg.out_dir.join("ablation.csv"), csv)
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs) -> anyhow::Result<()> {
    let mut runs = Vec::with_capacity(args.values.len());
    for &v in &args.values {
        let mut c = cfg.train.clone();
        args.axis.apply(&mut c, v)?;
        runs.push((v, c));
    }
    let g = load_data(cfg)?;
    let seeds = args.seeds.resolve(&cfg.train);
    cfg.write_beside(&cfg.out_dir)?;
    let mut csv = format!("{},mean,std{}\n", args.axis.name(), seed_columns(&seeds));
    for (v, c) in runs {
        let accs = seeds
            .iter()
            .map(|&seed| train_and_evaluate(&g, &TrainConfig { seed, ..c.clone() }))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let (mean, std) = mean_std(&accs);
        println!("{}={v} {mean:.4} ± {std:.4}", args.axis.name());
        write!(csv, "{v},{mean},{std}").unwrap();
        for a in &accs {
            write!(csv, ",{a}").unwrap();
        }
        csv.push('\n');
    }
    write(&cfg.out_dir.join(format!("sweep_{}.csv", args.axis.name())), csv)
}
