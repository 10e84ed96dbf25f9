use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use weakshot_core::graph::EgoSubgraph;
use weakshot_core::ib::{loss_d, loss_y, mask_subgraph, predict, scores, EgoCache, LossSettings, StepKey};
use weakshot_core::nn::{cosine_loss, encode, normalized_mse, softmax, softmax_cross_entropy, Encoder, PreparedEgo};
use weakshot_core::rng::Rng;
use weakshot_core::{generate_sbm, Dims, Graph, ParamSet, SbmConfig};

fn vector(len: usize) -> impl Strategy<Value = Array1<f64>> {
    proptest::collection::vec(-30.0f64..30.0, len).prop_map(Array1::from)
}

fn graph(seed: u64) -> Graph {
    generate_sbm(&SbmConfig {
        classes: 5,
        nodes_per_class: 8,
        p_in: 0.3,
        p_out: 0.02,
        feature_dim: 6,
        noise_std: 0.4,
        seed,
        split: [5, 0, 0],
    })
    .unwrap()
}

fn params(seed: u64) -> ParamSet {
    ParamSet::init(Dims { d: 6, h: 8, h1: 12, n_way: 5 }, seed)
}

fn random_ego(n: usize, d: usize, edges: &[(usize, usize, f64)], features: &[f64]) -> EgoSubgraph {
    let mut adjacency = Array2::zeros((n, n));
    for &(u, v, w) in edges {
        let (u, v) = (u % n, v % n);
        if u != v {
            adjacency[[u, v]] = w;
            adjacency[[v, u]] = w;
        }
    }
    let features = Array2::from_shape_fn((n, d), |(i, j)| features[(i * d + j) % features.len()]);
    EgoSubgraph {
        center: 0,
        global_ids: (0..n).collect(),
        adjacency,
        features,
    }
}

fn egos() -> impl Strategy<Value = EgoSubgraph> {
    (
        2usize..15,
        1usize..6,
        proptest::collection::vec((0usize..100, 0usize..100, 0.1f64..2.0), 0..60),
        proptest::collection::vec(prop_oneof![Just(0.0), -3.0f64..3.0], 1..40),
    )
        .prop_map(|(n, d, e, f)| random_ego(n, d, &e, &f))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_and_cross_entropy_gradient_are_normalized(s in (1usize..12).prop_flat_map(vector), label in 0usize..12) {
        let p = softmax(s.view());
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        let label = label % s.len();
        let (loss, grad) = softmax_cross_entropy(&s, label);
        prop_assert!(loss >= 0.0 && loss.is_finite());
        prop_assert!(grad.sum().abs() < 1e-12);
    }

    #[test]
    fn normalized_mse_is_two_minus_two_cosine((p, q) in (1usize..40).prop_flat_map(|n| (vector(n), vector(n)))) {
        prop_assume!(p.dot(&p) > 1e-6 && q.dot(&q) > 1e-6);
        let cos = -cosine_loss(&p, &q).loss;
        prop_assert!((normalized_mse(&p, &q) - (2.0 - 2.0 * cos)).abs() < 1e-10);
    }

    #[test]
    fn zero_dropout_matches_eval_mode(seed in 0u64..1000, node in 0usize..40) {
        let g = graph(seed);
        let p = params(seed);
        let prepared = PreparedEgo::from_ego(&g.ego_subgraph(node).unwrap());
        let train = encode(&p.theta.encoder, &prepared, 0.0, true, &mut Rng::seed_from_u64(seed)).unwrap();
        let eval = encode(&p.theta.encoder, &prepared, 0.5, false, &mut Rng::seed_from_u64(seed + 1)).unwrap();
        prop_assert_eq!(train.output, eval.output);
    }

    #[test]
    fn traces_replay_bit_exactly(seed in 0u64..1000, node in 0usize..40) {
        let g = graph(seed);
        let p = params(seed);
        let prepared = PreparedEgo::from_ego(&g.ego_subgraph(node).unwrap());
        let trace = encode(&p.theta.encoder, &prepared, 0.5, true, &mut Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(trace.replay(&p.theta.encoder), trace.output.clone());
        let again = encode(&p.theta.encoder, &prepared, 0.5, true, &mut Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(again.output, trace.output);
    }

    #[test]
    fn prediction_ignores_a_constant_logit_shift(seed in 0u64..1000, node in 0usize..40, shift in -100.0f64..100.0) {
        let g = graph(seed);
        let p = params(seed);
        let cache = EgoCache::build(&g, [node]).unwrap();
        let mut shifted = p.theta.clone();
        shifted.classifier.bias += shift;
        prop_assert_eq!(predict(&cache, node, &p.theta).unwrap(), predict(&cache, node, &shifted).unwrap());
        let gap = scores(&cache, node, &shifted).unwrap() - scores(&cache, node, &p.theta).unwrap();
        prop_assert!(gap.iter().all(|x| (x - shift).abs() < 1e-9));
    }

    #[test]
    fn masking_keeps_symmetry_and_only_zeroes(ego in egos(), gamma in 0.0f64..1.0, seed in 0u64..1000) {
        let m = mask_subgraph(&ego, gamma, seed);
        let n = ego.adjacency.nrows();
        prop_assert_eq!(&m.adjacency, &m.adjacency.t());
        prop_assert!(m.adjacency.diag().iter().all(|&x| x == 0.0));
        for i in 0..n {
            for j in 0..n {
                let x = m.adjacency[[i, j]];
                prop_assert!(x == 0.0 || x == ego.adjacency[[i, j]]);
            }
        }
        for (x, y) in m.features.iter().zip(&ego.features) {
            prop_assert!(*x == 0.0 || x == y);
        }
        prop_assert_eq!(&m.global_ids, &ego.global_ids);
        let replay = mask_subgraph(&ego, gamma, seed);
        prop_assert_eq!(replay.adjacency, m.adjacency);
    }

    #[test]
    fn zero_gamma_masks_nothing(ego in egos(), seed in 0u64..1000) {
        let m = mask_subgraph(&ego, 0.0, seed);
        prop_assert_eq!(m.adjacency, ego.adjacency.clone());
        prop_assert_eq!(m.features, ego.features.clone());
    }
}

fn setup(seed: u64) -> (Graph, EgoCache, Vec<(usize, usize)>, ParamSet) {
    let g = graph(seed);
    let labeled: Vec<(usize, usize)> = (0..10).map(|v| (v * 4, g.label(v * 4).unwrap())).collect();
    let cache = EgoCache::build(&g, labeled.iter().map(|l| l.0)).unwrap();
    (g, cache, labeled, params(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn label_loss_ignores_gamma_and_the_target_encoder(seed in 0u64..1000, gamma in 0.0f64..1.0) {
        let (_, cache, labeled, p) = setup(seed);
        let key = StepKey { seed, episode: 1, step: 2 };
        let base = loss_y(&cache, &labeled, &p.theta, &LossSettings::default(), key).unwrap();
        let other = loss_y(&cache, &labeled, &p.theta, &LossSettings { gamma, ..Default::default() }, key).unwrap();
        prop_assert_eq!(base.0, other.0);
        prop_assert_eq!(base.1, other.1);
    }

    #[test]
    fn distillation_loss_ignores_the_classifier(seed in 0u64..1000, scale in -5.0f64..5.0) {
        let (_, cache, labeled, p) = setup(seed);
        let nodes: Vec<usize> = labeled.iter().map(|l| l.0).collect();
        let key = StepKey { seed, episode: 0, step: 0 };
        let settings = LossSettings::default();
        let mut moved = p.theta.clone();
        moved.classifier.weight.mapv_inplace(|w| w * scale + 0.1);
        moved.classifier.bias.fill(scale);
        let a = loss_d(&cache, &nodes, &p.theta, &p.phi, &settings, key).unwrap();
        let b = loss_d(&cache, &nodes, &moved, &p.phi, &settings, key).unwrap();
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(&a.2, &b.2);
        prop_assert!(b.1.classifier.weight.iter().chain(&b.1.classifier.bias).all(|&x| x == 0.0));
    }
}

#[test]
fn label_loss_ignores_phi_by_construction() {
    // `loss_y` takes no target encoder; the combined objective with beta = 0
    // must agree with it for any φ.
    let (_, cache, labeled, p) = setup(4);
    let key = StepKey { seed: 4, episode: 0, step: 0 };
    let settings = LossSettings { beta: 0.0, ..Default::default() };
    let (ly, _) = loss_y(&cache, &labeled, &p.theta, &settings, key).unwrap();
    for phi in [p.phi.clone(), Encoder::zeros(6, 8), params(99).phi] {
        let out = weakshot_core::ib::loss_total(&cache, &labeled, &p.theta, &phi, &settings, key).unwrap();
        assert_eq!(out.l_y, ly);
        assert_eq!(out.total, ly);
    }
}
