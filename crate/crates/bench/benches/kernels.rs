use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use weakshot_bench::{graph, task};
use weakshot_core::ib::{loss_total, mask_subgraph, EgoCache, StepKey};
use weakshot_core::meta::fine_tune;
use weakshot_core::nn::{encode, PreparedEgo};
use weakshot_core::poisson::{assemble_subgraph, poisson_iterate, Scope};
use weakshot_core::rng::{stream, Purpose, Rng};
use weakshot_core::{ParamSet, TrainConfig};

fn kernels(c: &mut Criterion) {
    let g = graph();
    let cfg = TrainConfig::default();
    let t = task(&g, &cfg, 0);
    let params = ParamSet::init(cfg.dims(g.feature_dim()), 0);

    let mut sub = assemble_subgraph(&g, &t, cfg.r, &Scope::AllNodes, &mut stream(0, Purpose::Subgraph, &[0])).unwrap();
    sub.build_affinity(&g, &cfg.poisson()).unwrap();
    let a = sub.combined.clone().unwrap();
    c.bench_function("poisson_iterate", |b| b.iter(|| poisson_iterate(&a, &sub.sources, cfg.t_l).unwrap()));

    let ego = g.ego_subgraph(t.support[0].0).unwrap();
    c.bench_function("mask_subgraph", |b| b.iter(|| mask_subgraph(&ego, cfg.gamma, 7)));
    let prepared = PreparedEgo::from_ego(&ego);
    c.bench_function("encode_train_mode", |b| {
        b.iter_batched(
            || Rng::seed_from_u64(1),
            |mut rng| encode(&params.theta.encoder, &prepared, cfg.dropout, true, &mut rng).unwrap().output,
            BatchSize::SmallInput,
        )
    });

    let support = t.support.clone();
    let cache = EgoCache::build(&g, support.iter().map(|s| s.0)).unwrap();
    let key = StepKey { seed: 0, episode: 0, step: 0 };
    let settings = cfg.loss_settings(true);
    c.bench_function("loss_total_support", |b| {
        b.iter(|| loss_total(&cache, &support, &params.theta, &params.phi, &settings, key).unwrap().total)
    });

    let mut group = c.benchmark_group("episode");
    group.sample_size(10);
    group.bench_function("fine_tune", |b| {
        b.iter(|| fine_tune(&params.theta, &params.phi, &cache, &support, &cfg, 0, 0).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
