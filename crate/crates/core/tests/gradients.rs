use weakshot_core::audit::{audit_graph, gradient_audit, AuditShape};
use weakshot_core::ib::{loss_total, EgoCache, LossSettings, StepKey};
use weakshot_core::nn::Tensors;
use weakshot_core::{Dims, ParamSet};

#[test]
fn every_loss_path_matches_finite_differences() {
    for seed in [1, 2] {
        let audit = gradient_audit(seed, 1e-5, 24).unwrap();
        let losses: Vec<&str> = audit.checks.iter().map(|c| c.loss).collect();
        assert_eq!(losses, ["L_Y", "L_D", "L"]);
        for c in &audit.checks {
            // Eight θ tensors (encoder, classifier, predictor) and two φ tensors.
            assert_eq!(c.report.tensors.len(), 10, "{}", c.loss);
            assert!(c.report.max_rel_error < 1e-4, "seed {seed}: {c:#?}");
        }
    }
}

#[test]
fn parameter_groups_get_separate_gradients() {
    let shape = AuditShape::default();
    let g = audit_graph(shape, 5).unwrap();
    let nodes: Vec<(usize, usize)> = (0..shape.nodes).map(|v| (v, v % shape.n_way)).collect();
    let cache = EgoCache::build(&g, nodes.iter().map(|n| n.0)).unwrap();
    let p = ParamSet::init(
        Dims {
            d: shape.d,
            h: shape.h,
            h1: shape.h1,
            n_way: shape.n_way,
        },
        5,
    );
    let key = StepKey { seed: 5, episode: 0, step: 0 };
    let on = loss_total(&cache, &nodes, &p.theta, &p.phi, &LossSettings::default(), key).unwrap();
    let off = LossSettings {
        phi_grad: false,
        ..Default::default()
    };
    let frozen = loss_total(&cache, &nodes, &p.theta, &p.phi, &off, key).unwrap();
    assert_eq!(on.grad_theta, frozen.grad_theta);
    assert_eq!(on.total, frozen.total);
    assert!(frozen.grad_phi.tensors().iter().all(|(_, t)| t.iter().all(|&x| x == 0.0)));
    assert!(on.grad_phi.tensors().iter().any(|(_, t)| t.iter().any(|&x| x != 0.0)));
    assert_eq!(on.grad_phi.tensors().len(), 2);
}
