//! Finite-difference audit of the full loss pipeline on a small fixture.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{ClassSplits, Graph};
use crate::ib::{loss_d, loss_total, loss_y, EgoCache, LossSettings, StepKey};
use crate::nn::{grad_check, Dims, Encoder, GradCheckReport, ParamSet, Tensors};
use crate::rng::{stream, Purpose};

/// Shape of the audit fixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditShape {
    pub nodes: usize,
    pub d: usize,
    pub n_way: usize,
    pub h: usize,
    pub h1: usize,
}

impl Default for AuditShape {
    fn default() -> Self {
        Self {
            nodes: 12,
            d: 16,
            n_way: 5,
            h: 64,
            h1: 128,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossCheck {
    pub loss: &'static str,
    pub value: f64,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientAudit {
    pub seed: u64,
    pub eps: f64,
    pub shape: AuditShape,
    pub checks: Vec<LossCheck>,
}

impl GradientAudit {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max)
    }
}

/// A connected graph whose node-0 two-hop ego subgraph is the whole graph:
/// node 0 links to a hub layer, every other node hangs off a hub, and a few
/// random chords are added. Node `i` carries class `i % n_way`.
pub fn audit_graph(shape: AuditShape, seed: u64) -> Result<Graph> {
    let mut rng = stream(seed, Purpose::Audit, &[0]);
    let n = shape.nodes;
    let hubs = (n - 1).div_ceil(3).max(1);
    let mut edges: Vec<(usize, usize)> = (1..=hubs.min(n - 1)).map(|v| (0, v)).collect();
    for v in hubs + 1..n {
        edges.push((1 + (v % hubs), v));
    }
    for _ in 0..n / 2 {
        let (u, v) = (rng.random_range(1..n), rng.random_range(1..n));
        if u != v {
            edges.push((u, v));
        }
    }
    let features = Array2::from_shape_simple_fn((n, shape.d), || rng.sample::<f64, _>(StandardNormal));
    let labels = (0..n).map(|i| Some(i % shape.n_way)).collect();
    let splits = ClassSplits {
        train: (0..shape.n_way).collect(),
        ..Default::default()
    };
    Graph::new(features, edges, labels, splits)
}

/// Checks the analytic gradients of `L_Y`, `L_D` and `L = L_Y + beta L_D`
/// against central differences with step `eps`, probing at least
/// `min_coords` coordinates of every tensor in both parameter groups.
///
/// The gradient of `L` with respect to the target encoder is taken as
/// `beta` times the reported `L_D` gradient, so the check covers the
/// objective as a whole.
pub fn gradient_audit(seed: u64, eps: f64, min_coords: usize) -> Result<GradientAudit> {
    let shape = AuditShape::default();
    let g = audit_graph(shape, seed)?;
    let nodes: Vec<usize> = (0..shape.nodes).collect();
    let labeled: Vec<(usize, usize)> = nodes.iter().map(|&v| (v, v % shape.n_way)).collect();
    let cache = EgoCache::build(&g, nodes.iter().copied())?;
    let params = ParamSet::init(
        Dims {
            d: shape.d,
            h: shape.h,
            h1: shape.h1,
            n_way: shape.n_way,
        },
        seed,
    );
    let settings = LossSettings {
        beta: 0.5,
        ..LossSettings::default()
    };
    let key = StepKey { seed, episode: 0, step: 0 };
    let mut checks = Vec::new();

    let (value, grad_theta) = loss_y(&cache, &labeled, &params.theta, &settings, key)?;
    let analytic = ParamSet {
        theta: grad_theta,
        phi: params.phi.zeros_like(),
    };
    let f = |p: &ParamSet| loss_y(&cache, &labeled, &p.theta, &settings, key).map_or(f64::NAN, |r| r.0);
    checks.push(LossCheck {
        loss: "L_Y",
        value,
        report: grad_check(f, &params, &analytic, eps, min_coords)?,
    });

    let (value, grad_theta, grad_phi) = loss_d(&cache, &nodes, &params.theta, &params.phi, &settings, key)?;
    let analytic = ParamSet {
        theta: grad_theta,
        phi: grad_phi,
    };
    let f = |p: &ParamSet| loss_d(&cache, &nodes, &p.theta, &p.phi, &settings, key).map_or(f64::NAN, |r| r.0);
    checks.push(LossCheck {
        loss: "L_D",
        value,
        report: grad_check(f, &params, &analytic, eps, min_coords)?,
    });

    let out = loss_total(&cache, &labeled, &params.theta, &params.phi, &settings, key)?;
    let mut phi: Encoder = params.phi.zeros_like();
    phi.scaled_add(settings.beta, &out.grad_phi);
    let analytic = ParamSet {
        theta: out.grad_theta,
        phi,
    };
    let f = |p: &ParamSet| loss_total(&cache, &labeled, &p.theta, &p.phi, &settings, key).map_or(f64::NAN, |r| r.total);
    checks.push(LossCheck {
        loss: "L",
        value: out.total,
        report: grad_check(f, &params, &analytic, eps, min_coords)?,
    });

    Ok(GradientAudit {
        seed,
        eps,
        shape,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_ego_is_whole_graph() {
        for seed in 0..5 {
            let g = audit_graph(AuditShape::default(), seed).unwrap();
            assert_eq!(g.ego_subgraph(0).unwrap().len(), 12);
        }
    }

    #[test]
    fn small_audit_passes() {
        let audit = gradient_audit(3, 1e-5, 8).unwrap();
        assert_eq!(audit.checks.len(), 3);
        assert!(audit.max_rel_error() < 1e-4, "{audit:#?}");
        for c in &audit.checks {
            assert!(c.value.is_finite());
            assert_eq!(c.report.tensors.len(), 10);
        }
    }
}
