//! Pseudo-labeling by Poisson label propagation on a per-task subgraph.
//!
//! For each task a small node set is assembled around the support nodes
//! (their 2-hop neighborhoods plus `R` random nodes and *their* 2-hop
//! neighborhoods). Edges mix induced structure with a feature-distance
//! affinity, labels are propagated from mean-centered sources on the support
//! rows, and the lowest-entropy predictions among unlabeled rows become
//! pseudo-labels.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::episode::MetaTask;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonConfig {
    /// Random seed nodes added to the subgraph.
    pub r: usize,
    /// Scale of the feature affinity `exp(-eta * ||x_i - x_j||)`.
    pub eta: f64,
    /// Weight of structural edges in the combined adjacency.
    pub lambda: f64,
    /// Propagation steps.
    pub t_l: usize,
    /// Pseudo-labels kept per task.
    pub m: usize,
    /// l2-normalize feature rows before computing affinities.
    pub normalize_features: bool,
    /// Keep only the `k` largest feature affinities per row (symmetrized)
    /// once the subgraph has more than `min_nodes` nodes.
    pub sparsify: Option<Sparsify>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sparsify {
    pub k: usize,
    pub min_nodes: usize,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            r: 10,
            eta: 100.0,
            lambda: 0.5,
            t_l: 10,
            m: 20,
            normalize_features: false,
            sparsify: None,
        }
    }
}

impl PoissonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Which graph nodes may enter a propagation subgraph as unlabeled nodes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Scope {
    #[default]
    AllNodes,
    /// Nodes whose label is one of these classes are left out.
    ExcludeClasses(HashSet<usize>),
}

impl Scope {
    fn admits(&self, g: &Graph, node: usize) -> bool {
        match self {
            Scope::AllNodes => true,
            Scope::ExcludeClasses(classes) => g.label(node).is_none_or(|c| !classes.contains(&c)),
        }
    }
}

/// Task subgraph with support rows first.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonSubgraph {
    /// Support nodes in task order, then the remaining nodes ascending.
    pub node_ids: Vec<usize>,
    pub num_labeled: usize,
    pub n_way: usize,
    pub a_struct: Array2<f64>,
    /// `N x NK`, column `i` is the one-hot label of support node `i`.
    pub label_matrix: Array2<f64>,
    pub mean_label: Array1<f64>,
    /// `N x |V_s|` sources: centered labels on support columns, zero elsewhere.
    pub sources: Array2<f64>,
    pub a_feat: Option<Array2<f64>>,
    pub combined: Option<Array2<f64>>,
}

impl PoissonSubgraph {
    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    /// Fills `a_feat` and `combined` from the graph features.
    pub fn build_affinity(&mut self, g: &Graph, cfg: &PoissonConfig) -> Result<()> {
        let feats = g.gather_features(&self.node_ids);
        let mut a_feat = feature_affinity(feats.view(), cfg.eta, cfg.normalize_features);
        if let Some(sp) = cfg.sparsify {
            if self.len() > sp.min_nodes {
                a_feat = sparsify_top_k(&a_feat, sp.k);
            }
        }
        self.combined = Some(combine(&self.a_struct, &a_feat, cfg.lambda)?);
        self.a_feat = Some(a_feat);
        Ok(())
    }
}

/// Label matrix, mean label vector and source matrix for support labels.
fn sources_for(labels: &[usize], n_way: usize, total: usize) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let nk = labels.len();
    let mut f = Array2::zeros((n_way, nk));
    for (i, &l) in labels.iter().enumerate() {
        f[[l, i]] = 1.0;
    }
    let mean = if nk == 0 {
        Array1::zeros(n_way)
    } else {
        f.sum_axis(Axis(1)) / nk as f64
    };
    let mut b = Array2::zeros((n_way, total));
    for i in 0..nk {
        for c in 0..n_way {
            b[[c, i]] = f[[c, i]] - mean[c];
        }
    }
    (f, mean, b)
}

/// Assembles `V_s = S ∪ V_n ∪ V_r ∪ V_rn` for a task. `extra` nodes are
/// appended as unlabeled nodes (used by the propagation-only baseline).
pub fn assemble_subgraph_with(
    g: &Graph,
    task: &MetaTask,
    r: usize,
    scope: &Scope,
    extra: &[usize],
    rng: &mut Rng,
) -> Result<PoissonSubgraph> {
    let support = task.support_nodes();
    for &s in support.iter().chain(extra) {
        if s >= g.num_nodes() {
            return Err(Error::NodeOutOfRange {
                node: s,
                num_nodes: g.num_nodes(),
            });
        }
    }
    let in_support: HashSet<usize> = support.iter().copied().collect();
    let neighbors: Vec<usize> = g
        .neighborhood(&support, 2)
        .into_iter()
        .filter(|&v| scope.admits(g, v))
        .collect();
    let mut taken: HashSet<usize> = in_support.iter().chain(&neighbors).copied().collect();

    let candidates: Vec<usize> = (0..g.num_nodes())
        .filter(|v| !taken.contains(v) && scope.admits(g, *v))
        .collect();
    if candidates.len() < r {
        log::warn!("only {} nodes available for random sampling, {} requested", candidates.len(), r);
    }
    let random: Vec<usize> = candidates.choose_multiple(rng, r.min(candidates.len())).copied().collect();
    let random_neighbors: Vec<usize> = g
        .neighborhood(&random, 2)
        .into_iter()
        .filter(|&v| scope.admits(g, v))
        .collect();
    taken.extend(random.iter().chain(&random_neighbors).chain(extra));

    let mut rest: Vec<usize> = taken.into_iter().filter(|v| !in_support.contains(v)).collect();
    rest.sort_unstable();
    let mut node_ids = support;
    node_ids.extend(rest);

    let labels: Vec<usize> = task.support.iter().map(|&(_, l)| l).collect();
    let (label_matrix, mean_label, sources) = sources_for(&labels, task.n_way(), node_ids.len());
    Ok(PoissonSubgraph {
        a_struct: g.induced_adjacency(&node_ids),
        num_labeled: labels.len(),
        n_way: task.n_way(),
        node_ids,
        label_matrix,
        mean_label,
        sources,
        a_feat: None,
        combined: None,
    })
}

pub fn assemble_subgraph(g: &Graph, task: &MetaTask, r: usize, scope: &Scope, rng: &mut Rng) -> Result<PoissonSubgraph> {
    assemble_subgraph_with(g, task, r, scope, &[], rng)
}

/// `exp(-eta * ||x_i - x_j||_2)` off the diagonal, zero on it.
pub fn feature_affinity(features: ArrayView2<'_, f64>, eta: f64, normalize: bool) -> Array2<f64> {
    let mut x = features.to_owned();
    if normalize {
        for mut row in x.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    let n = x.nrows();
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let dist = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(p, q)| (p - q) * (p - q))
                .sum::<f64>()
                .sqrt();
            let w = (-eta * dist).exp();
            a[[i, j]] = w;
            a[[j, i]] = w;
        }
    }
    a
}

/// Keeps entry `(i, j)` if it is among the `k` largest of row `i` or of row `j`.
fn sparsify_top_k(a: &Array2<f64>, k: usize) -> Array2<f64> {
    let n = a.nrows();
    let mut keep = Array2::from_elem((n, n), false);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&p, &q| a[[i, q]].total_cmp(&a[[i, p]]).then(p.cmp(&q)));
        for &j in order.iter().take(k) {
            keep[[i, j]] = true;
            keep[[j, i]] = true;
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| if keep[[i, j]] { a[[i, j]] } else { 0.0 })
}

/// `lambda * a_struct + (1 - lambda) * a_feat` with a zero diagonal.
pub fn combine(a_struct: &Array2<f64>, a_feat: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if a_struct.dim() != a_feat.dim() {
        return Err(Error::Shape(format!(
            "structural {:?} vs feature {:?}",
            a_struct.dim(),
            a_feat.dim()
        )));
    }
    let mut a = a_struct * lambda + a_feat * (1.0 - lambda);
    a.diag_mut().fill(0.0);
    Ok(a)
}

/// The iteration `U <- U + D^-1 (B^T - L U)` from `U = 0`, with
/// `L = D - A`, exposed one step at a time.
#[derive(Debug, Clone)]
pub struct PoissonIteration<'a> {
    a: &'a Array2<f64>,
    bt: ArrayView2<'a, f64>,
    inv_degree: Array1<f64>,
    u: Array2<f64>,
    steps: usize,
}

impl<'a> PoissonIteration<'a> {
    pub fn new(a: &'a Array2<f64>, b: &'a Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.ncols() != n {
            return Err(Error::Shape(format!("adjacency {:?} vs sources {:?}", a.dim(), b.dim())));
        }
        let degree = a.sum_axis(Axis(1));
        if let Some(index) = degree.iter().position(|&d| d <= 0.0) {
            return Err(Error::ZeroDegree { index });
        }
        Ok(Self {
            a,
            bt: b.t(),
            inv_degree: degree.mapv(f64::recip),
            u: Array2::zeros((n, b.nrows())),
            steps: 0,
        })
    }

    pub fn step(&mut self) {
        // U + D^-1 (B^T - (D - A) U) = D^-1 (B^T + A U)
        let mut next = self.a.dot(&self.u);
        next += &self.bt;
        for (mut row, &w) in next.rows_mut().into_iter().zip(&self.inv_degree) {
            row *= w;
        }
        self.u = next;
        self.steps += 1;
    }

    /// The current iterate, `|V_s| x N`.
    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn into_u(self) -> Array2<f64> {
        self.u
    }
}

/// `t_l` steps of [`PoissonIteration`]. Returns `|V_s| x N`.
pub fn poisson_iterate(a: &Array2<f64>, b: &Array2<f64>, t_l: usize) -> Result<Array2<f64>> {
    let mut it = PoissonIteration::new(a, b)?;
    for _ in 0..t_l {
        it.step();
    }
    Ok(it.into_u())
}

/// Row-wise softmax.
pub fn softmax_rows(u: &Array2<f64>) -> Array2<f64> {
    let mut p = u.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Natural-log entropy of each row after softmax.
pub fn confidence(u: &Array2<f64>) -> Vec<f64> {
    softmax_rows(u)
        .rows()
        .into_iter()
        .map(|row| row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub node: usize,
    pub local_label: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub node: usize,
    pub local_label: usize,
    pub is_pseudo: bool,
}

/// Original support followed by selected pseudo-labeled nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedSupport {
    pub entries: Vec<SupportEntry>,
}

impl AugmentedSupport {
    /// The support set alone, without pseudo-labels.
    pub fn plain(task: &MetaTask) -> Self {
        Self {
            entries: task
                .support
                .iter()
                .map(|&(node, local_label)| SupportEntry {
                    node,
                    local_label,
                    is_pseudo: false,
                })
                .collect(),
        }
    }

    pub fn augmented(task: &MetaTask, pseudo: &[PseudoLabel]) -> Self {
        let mut s = Self::plain(task);
        s.entries.extend(pseudo.iter().map(|p| SupportEntry {
            node: p.node,
            local_label: p.local_label,
            is_pseudo: true,
        }));
        s
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_pseudo(&self) -> usize {
        self.entries.iter().filter(|e| e.is_pseudo).count()
    }

    pub fn labeled_nodes(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| (e.node, e.local_label)).collect()
    }
}

/// Picks the `m` unlabeled rows with the lowest entropy (ties by ascending
/// global id). Support rows are never candidates.
pub fn select_pseudo(u: &Array2<f64>, entropy: &[f64], sub: &PoissonSubgraph, m: usize) -> Vec<PseudoLabel> {
    let mut candidates: Vec<usize> = (sub.num_labeled..sub.len()).collect();
    if candidates.len() < m {
        log::warn!("only {} pseudo-label candidates, {} requested", candidates.len(), m);
    }
    candidates.sort_by(|&i, &j| {
        entropy[i]
            .total_cmp(&entropy[j])
            .then(sub.node_ids[i].cmp(&sub.node_ids[j]))
    });
    candidates
        .into_iter()
        .take(m)
        .map(|i| PseudoLabel {
            node: sub.node_ids[i],
            local_label: argmax(u.row(i).iter().copied()),
            entropy: entropy[i],
        })
        .collect()
}

/// Everything produced by one propagation run.
#[derive(Debug, Clone)]
pub struct Propagation {
    pub subgraph: PoissonSubgraph,
    pub u: Array2<f64>,
    pub entropy: Vec<f64>,
    pub pseudo: Vec<PseudoLabel>,
}

impl Propagation {
    /// Fraction of pseudo-labels whose node truly belongs to the assigned
    /// class, if any pseudo-labels were selected.
    pub fn precision(&self, g: &Graph, task: &MetaTask) -> Option<f64> {
        pseudo_precision(g, task, &self.pseudo)
    }

    pub fn augmented_support(&self, task: &MetaTask) -> AugmentedSupport {
        AugmentedSupport::augmented(task, &self.pseudo)
    }
}

pub fn pseudo_precision(g: &Graph, task: &MetaTask, pseudo: &[PseudoLabel]) -> Option<f64> {
    if pseudo.is_empty() {
        return None;
    }
    let hits = pseudo
        .iter()
        .filter(|p| g.label(p.node) == Some(task.class_ids[p.local_label]))
        .count();
    Some(hits as f64 / pseudo.len() as f64)
}

/// Full pipeline: assemble, weight, propagate, score, select.
pub fn propagate(g: &Graph, task: &MetaTask, cfg: &PoissonConfig, scope: &Scope, rng: &mut Rng) -> Result<Propagation> {
    propagate_with(g, task, cfg, scope, &[], rng)
}

pub fn propagate_with(
    g: &Graph,
    task: &MetaTask,
    cfg: &PoissonConfig,
    scope: &Scope,
    extra: &[usize],
    rng: &mut Rng,
) -> Result<Propagation> {
    cfg.validate()?;
    let mut subgraph = assemble_subgraph_with(g, task, cfg.r, scope, extra, rng)?;
    subgraph.build_affinity(g, cfg)?;
    let u = poisson_iterate(subgraph.combined.as_ref().expect("affinity built"), &subgraph.sources, cfg.t_l)?;
    let entropy = confidence(&u);
    let pseudo = select_pseudo(&u, &entropy, &subgraph, cfg.m);
    Ok(Propagation {
        subgraph,
        u,
        entropy,
        pseudo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ClassSplits, Graph};
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng};

    fn task(support: &[(usize, usize)], n_way: usize) -> MetaTask {
        MetaTask {
            class_ids: (0..n_way).collect(),
            support: support.to_vec(),
            query: vec![],
        }
    }

    fn plain_graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        let feats = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        Graph::new(feats, edges.iter().copied(), vec![None; n], ClassSplits::default()).unwrap()
    }

    #[test]
    fn no_expansion_for_isolated_support() {
        let g = plain_graph(5, &[(2, 3)]);
        let t = task(&[(0, 0), (1, 1)], 2);
        let sub = assemble_subgraph(&g, &t, 0, &Scope::AllNodes, &mut stream(0, Purpose::Subgraph, &[])).unwrap();
        assert_eq!(sub.node_ids, vec![0, 1]);
    }

    #[test]
    fn r_zero_is_support_plus_two_hop() {
        let g = crate::graph::tests::random_graph(30, 0.07, 4);
        let t = task(&[(5, 0), (17, 1), (3, 0)], 2);
        let sub = assemble_subgraph(&g, &t, 0, &Scope::AllNodes, &mut stream(0, Purpose::Subgraph, &[])).unwrap();
        let mut expect: Vec<usize> = [5, 17, 3]
            .iter()
            .flat_map(|&s| g.k_hop_neighbors(s, 2).unwrap())
            .filter(|v| ![5, 17, 3].contains(v))
            .collect();
        expect.sort_unstable();
        expect.dedup();
        assert_eq!(&sub.node_ids[..3], &[5, 17, 3]);
        assert_eq!(&sub.node_ids[3..], &expect[..]);
    }

    #[test]
    fn random_sampling_adds_r_nodes_and_their_neighborhoods() {
        // Support 0 is isolated; the only other edges form the path 6-7-8-9.
        let g = plain_graph(12, &[(6, 7), (7, 8), (8, 9)]);
        let t = task(&[(0, 0)], 1);
        for seed in 0..20 {
            let sub = assemble_subgraph(&g, &t, 1, &Scope::AllNodes, &mut stream(seed, Purpose::Subgraph, &[])).unwrap();
            let rest = &sub.node_ids[1..];
            let closure = |v: usize| {
                let mut c = vec![v];
                c.extend(g.k_hop_neighbors(v, 2).unwrap());
                c.sort_unstable();
                c
            };
            assert!(rest.iter().any(|&v| closure(v) == rest), "seed {seed}: {rest:?}");
        }
        let all = assemble_subgraph(&g, &t, 100, &Scope::AllNodes, &mut stream(1, Purpose::Subgraph, &[])).unwrap();
        assert_eq!(all.len(), 12);
    }

    #[test]
    fn scope_excludes_classes() {
        let feats = Array2::zeros((4, 1));
        let splits = ClassSplits { train: vec![0], val: vec![], test: vec![1] };
        let g = Graph::new(feats, [(0, 1), (1, 2), (2, 3)], vec![Some(0), Some(1), Some(0), None], splits).unwrap();
        let t = task(&[(0, 0)], 1);
        let scope = Scope::ExcludeClasses([1].into_iter().collect());
        let sub = assemble_subgraph(&g, &t, 5, &scope, &mut stream(0, Purpose::Subgraph, &[])).unwrap();
        assert!(!sub.node_ids.contains(&1));
        assert_eq!(sub.node_ids, vec![0, 2, 3]);
    }

    #[test]
    fn sources_are_centered() {
        let g = crate::graph::tests::random_graph(20, 0.2, 2);
        let t = task(&[(0, 0), (1, 1), (2, 2), (3, 0)], 3);
        let sub = assemble_subgraph(&g, &t, 2, &Scope::AllNodes, &mut stream(0, Purpose::Subgraph, &[])).unwrap();
        assert_eq!(sub.label_matrix.dim(), (3, 4));
        assert_eq!(sub.mean_label.to_vec(), vec![0.5, 0.25, 0.25]);
        for c in 0..3 {
            assert!(sub.sources.row(c).sum().abs() < 1e-15);
        }
        assert!(sub.sources.slice(ndarray::s![.., 4..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affinity_values() {
        let eta = 100.0;
        let d = std::f64::consts::LN_2 / eta;
        let x = ndarray::array![[0.0, 0.0], [0.0, 0.0], [d, 0.0]];
        let a = feature_affinity(x.view(), eta, false);
        assert_eq!(a[[0, 1]], 1.0);
        assert!((a[[0, 2]] - 0.5).abs() < 1e-15);
        assert!(a.diag().iter().all(|&v| v == 0.0));
        let n = feature_affinity(ndarray::array![[3.0, 4.0], [6.0, 8.0]].view(), 1.0, true);
        assert_eq!(n[[0, 1]], 1.0);
    }

    #[test]
    fn combine_endpoints() {
        let s = ndarray::array![[0.0, 1.0], [1.0, 0.0]];
        let f = ndarray::array![[0.0, 0.3], [0.3, 0.0]];
        assert_eq!(combine(&s, &f, 1.0).unwrap(), s);
        assert_eq!(combine(&s, &f, 0.0).unwrap(), f);
        assert_eq!(combine(&s, &f, 0.5).unwrap()[[0, 1]], 0.65);
        assert!(combine(&s, &Array2::zeros((3, 3)), 0.5).is_err());
    }

    #[test]
    fn zero_steps_is_zero() {
        let a = ndarray::array![[0.0, 1.0], [1.0, 0.0]];
        let b = ndarray::array![[0.5, 0.0], [-0.5, 0.0]];
        assert_eq!(poisson_iterate(&a, &b, 0).unwrap(), Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn zero_degree_rejected() {
        let a = ndarray::array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let b = Array2::zeros((2, 3));
        assert!(matches!(poisson_iterate(&a, &b, 1), Err(Error::ZeroDegree { index: 2 })));
    }

    #[test]
    fn components_take_their_source_label() {
        // Two triangles {0,2,3} and {1,4,5}, one labeled node each.
        let a_struct = {
            let g = plain_graph(6, &[(0, 2), (2, 3), (3, 0), (1, 4), (4, 5), (5, 1)]);
            g.induced_adjacency(&[0, 1, 2, 3, 4, 5])
        };
        let (_, _, b) = sources_for(&[0, 1], 2, 6);
        let u = poisson_iterate(&a_struct, &b, 1000).unwrap();
        for (row, label) in [(2, 0), (3, 0), (4, 1), (5, 1)] {
            assert_eq!(argmax(u.row(row).iter().copied()), label);
        }
    }

    #[test]
    fn entropy_limits() {
        let uniform = Array2::from_elem((1, 5), 0.3);
        assert!((confidence(&uniform)[0] - 5f64.ln()).abs() < 1e-14);
        let peaked = ndarray::array![[1000.0, 0.0, 0.0]];
        assert!(confidence(&peaked)[0] < 1e-12);
    }

    #[test]
    fn entropy_matches_direct_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let u = Array2::from_shape_fn((40, 5), |_| rng.random_range(-2.0..2.0));
        let c = confidence(&u);
        for (i, row) in u.rows().into_iter().enumerate() {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let direct: f64 = row.iter().map(|v| {
                let p = v.exp() / z;
                -p * p.ln()
            }).sum();
            assert!((c[i] - direct).abs() < 1e-12);
        }
    }

    fn sub_with(node_ids: Vec<usize>, num_labeled: usize) -> PoissonSubgraph {
        let n = node_ids.len();
        PoissonSubgraph {
            node_ids,
            num_labeled,
            n_way: 2,
            a_struct: Array2::zeros((n, n)),
            label_matrix: Array2::zeros((2, num_labeled)),
            mean_label: Array1::zeros(2),
            sources: Array2::zeros((2, n)),
            a_feat: None,
            combined: None,
        }
    }

    #[test]
    fn identical_rows_select_smallest_ids() {
        let sub = sub_with(vec![50, 51, 9, 3, 7, 12], 2);
        let u = Array2::from_elem((6, 2), 0.1);
        let e = confidence(&u);
        let picked: Vec<usize> = select_pseudo(&u, &e, &sub, 3).iter().map(|p| p.node).collect();
        assert_eq!(picked, vec![3, 7, 9]);
    }

    #[test]
    fn selection_matches_sort_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let ids: Vec<usize> = vec![100, 101, 102, 7, 3, 15, 9, 22, 1, 40, 33, 18, 27];
        let sub = sub_with(ids.clone(), 3);
        let u = Array2::from_shape_fn((13, 2), |_| rng.random_range(-1.0..1.0));
        let e = confidence(&u);
        let got = select_pseudo(&u, &e, &sub, 4);
        // oracle: enumerate all candidates, full sort by (entropy, id)
        let mut all: Vec<(f64, usize, usize)> = (3..13)
            .map(|i| (e[i], ids[i], if u[[i, 1]] > u[[i, 0]] { 1 } else { 0 }))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let expect: Vec<(usize, usize)> = all[..4].iter().map(|t| (t.1, t.2)).collect();
        let got_pairs: Vec<(usize, usize)> = got.iter().map(|p| (p.node, p.local_label)).collect();
        assert_eq!(got_pairs, expect);
        assert!(got.iter().all(|p| !ids[..3].contains(&p.node)));
    }

    #[test]
    fn short_candidate_list_takes_all() {
        let sub = sub_with(vec![1, 2, 3], 2);
        let u = Array2::zeros((3, 2));
        let e = confidence(&u);
        assert_eq!(select_pseudo(&u, &e, &sub, 20).len(), 1);
    }

    proptest! {
        #[test]
        fn affinity_nonincreasing_in_distance(d1 in 0.0f64..0.2, d2 in 0.0f64..0.2, eta in 1.0f64..200.0) {
            let x = ndarray::array![[0.0], [d1], [d2]];
            let a = feature_affinity(x.view(), eta, false);
            if d1 <= d2 {
                prop_assert!(a[[0, 1]] >= a[[0, 2]]);
            }
            prop_assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert_eq!(a.clone(), a.t().to_owned());
        }
    }
}
