//! Information-bottleneck fine-tuning losses.
//!
//! `L_Y` is the cross-entropy of the classifier on top of the online encoder.
//! `L_D` is the negative cosine between the predictor's output for the clean
//! ego view and the target encoder's embedding of a randomly masked view.
//! The fine-tuning objective is `L = L_Y + beta * L_D`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, Geometric};

use crate::error::{Error, Result};
use crate::graph::{EgoSubgraph, Graph};
use crate::nn::{classify, cosine_loss, encode, softmax_cross_entropy, Encoder, PreparedEgo, Tensors, Theta};
use crate::poisson::argmax;
use crate::rng::{derive_seed, stream, Purpose, Rng};

/// Ego view with adjacency and feature entries zeroed at rate `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedEgo {
    pub center: usize,
    pub global_ids: Vec<usize>,
    pub adjacency: Array2<f64>,
    pub features: Array2<f64>,
    pub seed: u64,
}

/// Indices in `0..len` selected independently with probability `gamma`.
/// The gaps between selected indices are geometric, so a stream of
/// `len` entries costs about `gamma * len` draws instead of `len`.
fn masked_indices(rng: &mut Rng, gamma: f64, len: usize) -> impl Iterator<Item = usize> + '_ {
    let gaps = (gamma > 0.0).then(|| Geometric::new(gamma.min(1.0)).expect("gamma lies in (0, 1]"));
    let mut next = 0usize;
    std::iter::from_fn(move || {
        let gaps = gaps.as_ref()?;
        let gap = usize::try_from(gaps.sample(rng)).unwrap_or(usize::MAX);
        let idx = next.checked_add(gap).filter(|&i| i < len)?;
        next = idx + 1;
        Some(idx)
    })
}

/// Masks each upper-triangular adjacency entry (mirrored) and each feature
/// entry independently with probability `gamma`, drawing from a stream
/// seeded by `seed`. Nonzero adjacency entries in row-major order come
/// first, then nonzero feature entries in row-major order; entries that are
/// already zero take no part, since masking them cannot change the view.
pub fn mask_subgraph(ego: &EgoSubgraph, gamma: f64, seed: u64) -> MaskedEgo {
    let mut rng = Rng::seed_from_u64(seed);
    let mut adjacency = ego.adjacency.clone();
    let n = adjacency.nrows();
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| adjacency[[i, j]] != 0.0)
        .collect();
    let mut features = ego.features.clone();
    let nonzero: Vec<usize> = features.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, _)| k).collect();
    let d = features.ncols();
    for idx in masked_indices(&mut rng, gamma, edges.len() + nonzero.len()) {
        match edges.get(idx) {
            Some(&(i, j)) => {
                adjacency[[i, j]] = 0.0;
                adjacency[[j, i]] = 0.0;
            }
            None => {
                let k = nonzero[idx - edges.len()];
                features[[k / d, k % d]] = 0.0;
            }
        }
    }
    MaskedEgo {
        center: ego.center,
        global_ids: ego.global_ids.clone(),
        adjacency,
        features,
        seed,
    }
}

/// An ego subgraph with its clean encoder input. Edges are numbered in
/// row-major upper-triangle order, matching [`mask_subgraph`].
#[derive(Debug)]
struct CachedEgo {
    ego: EgoSubgraph,
    prepared: PreparedEgo,
    num_edges: usize,
    /// Per node, `(neighbor, weight, edge id)` sorted by neighbor.
    neighbors: Vec<Vec<(usize, f64, usize)>>,
    /// Row-major indices of the nonzero feature entries.
    nonzero_features: Vec<usize>,
}

impl CachedEgo {
    fn new(ego: EgoSubgraph) -> Self {
        let n = ego.adjacency.nrows();
        let mut neighbors = vec![Vec::new(); n];
        let mut num_edges = 0;
        for i in 0..n {
            for j in i + 1..n {
                let a = ego.adjacency[[i, j]];
                if a != 0.0 {
                    neighbors[i].push((j, a, num_edges));
                    neighbors[j].push((i, a, num_edges));
                    num_edges += 1;
                }
            }
        }
        for list in &mut neighbors {
            list.sort_unstable_by_key(|&(j, _, _)| j);
        }
        let nonzero_features = ego.features.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, _)| k).collect();
        Self {
            prepared: PreparedEgo::from_ego(&ego),
            ego,
            num_edges,
            neighbors,
            nonzero_features,
        }
    }

    /// Encoder input of `mask_subgraph(&self.ego, gamma, seed)`, computed
    /// from the edge lists with the same draws.
    fn masked_input(&self, gamma: f64, seed: u64) -> PreparedEgo {
        let mut rng = Rng::seed_from_u64(seed);
        let mut kept = vec![true; self.num_edges];
        let mut features = self.ego.features.clone();
        let d = features.ncols();
        for idx in masked_indices(&mut rng, gamma, self.num_edges + self.nonzero_features.len()) {
            match kept.get_mut(idx) {
                Some(k) => *k = false,
                None => {
                    let k = self.nonzero_features[idx - self.num_edges];
                    features[[k / d, k % d]] = 0.0;
                }
            }
        }
        // Edges are visited in row-major order, so each node's degree
        // accumulates in ascending neighbor order, as in the dense path.
        let mut degrees = vec![0.0; self.neighbors.len()];
        for (i, list) in self.neighbors.iter().enumerate() {
            for &(j, a, e) in list {
                if j > i && kept[e] {
                    degrees[i] += a;
                    degrees[j] += a;
                }
            }
        }
        let neighbors = |i: usize| {
            self.neighbors[i]
                .iter()
                .filter(|e| kept[e.2])
                .map(|&(j, a, _)| (j, a))
        };
        PreparedEgo::from_parts(&degrees, neighbors, &features, self.ego.center)
    }
}

/// Ego subgraphs (and their weight-independent encoder inputs) for a node set.
#[derive(Debug, Default)]
pub struct EgoCache {
    entries: HashMap<usize, CachedEgo>,
}

impl EgoCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(g: &Graph, nodes: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut c = Self::new();
        c.extend(g, nodes)?;
        Ok(c)
    }

    pub fn extend(&mut self, g: &Graph, nodes: impl IntoIterator<Item = usize>) -> Result<()> {
        for node in nodes {
            if let Entry::Vacant(slot) = self.entries.entry(node) {
                slot.insert(CachedEgo::new(g.ego_subgraph(node)?));
            }
        }
        Ok(())
    }

    fn get(&self, node: usize) -> Result<&CachedEgo> {
        self.entries
            .get(&node)
            .ok_or_else(|| Error::Config(format!("ego subgraph of node {node} not prepared")))
    }
}

/// Identifies the random streams of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepKey {
    pub seed: u64,
    pub episode: u64,
    pub step: u64,
}

impl StepKey {
    fn dropout(&self, node: usize, branch: u64) -> Rng {
        stream(self.seed, Purpose::Dropout, &[self.episode, self.step, node as u64, branch])
    }

    fn mask_seed(&self, node: usize) -> u64 {
        derive_seed(self.seed, Purpose::Mask, &[self.episode, self.step, node as u64])
    }
}

/// Hyper-parameters shared by every loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub beta: f64,
    pub gamma: f64,
    pub dropout: f64,
    /// Whether the target encoder also applies dropout in train mode.
    pub target_dropout: bool,
    pub train_mode: bool,
    /// Whether to backpropagate into the target encoder. When false,
    /// `grad_phi` is left at zero.
    pub phi_grad: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 0.1,
            dropout: 0.5,
            target_dropout: true,
            train_mode: true,
            phi_grad: true,
        }
    }
}

/// Loss values and gradients of one evaluation. `grad_theta` is the gradient
/// of the requested objective; `grad_phi` is always the gradient of `L_D`
/// alone (unscaled by `beta`), which is what the target encoder follows.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub l_y: f64,
    pub l_d: f64,
    pub total: f64,
    pub grad_theta: Theta,
    pub grad_phi: Encoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terms {
    LabelOnly,
    DistillOnly,
    Both,
}

/// Stacks equal-length vectors as matrix rows.
fn stack<'a>(rows: impl ExactSizeIterator<Item = &'a Array1<f64>>, width: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), width));
    for (mut dst, src) in m.rows_mut().into_iter().zip(rows) {
        dst.assign(src);
    }
    m
}

/// `acc += aᵀ b`.
fn add_at_b(acc: &mut Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) {
    general_mat_mul(1.0, &a.t(), b, 1.0, acc);
}

/// Per-node encoder passes are independent; the heads and the encoders'
/// second layers run batched over all nodes.
fn compute(
    cache: &EgoCache,
    labeled: &[(usize, Option<usize>)],
    theta: &Theta,
    phi: &Encoder,
    settings: &LossSettings,
    terms: Terms,
    key: StepKey,
) -> Result<LossOutput> {
    if settings.beta < 0.0 {
        return Err(Error::Config("beta must be non-negative".into()));
    }
    let want_y = terms != Terms::DistillOnly;
    let want_d = terms != Terms::LabelOnly;
    let beta = if terms == Terms::Both { settings.beta } else { 1.0 };
    let mut grad_theta = theta.zeros_like();
    let mut grad_phi = phi.zeros_like();
    let (mut l_y, mut l_d) = (0.0, 0.0);

    let cached = labeled.iter().map(|&(node, _)| cache.get(node)).collect::<Result<Vec<_>>>()?;
    let traces = cached
        .iter()
        .zip(labeled)
        .map(|(c, &(node, _))| {
            encode(&theta.encoder, &c.prepared, settings.dropout, settings.train_mode, &mut key.dropout(node, 0))
        })
        .collect::<Result<Vec<_>>>()?;
    let width = theta.encoder.w2.ncols();
    let h = stack(traces.iter().map(|t| &t.output), width);
    let mut d_h = Array2::zeros(h.raw_dim());

    if want_y {
        let n_way = theta.classifier.weight.ncols();
        let scores = h.dot(&theta.classifier.weight) + &theta.classifier.bias;
        let mut d_scores = Array2::zeros(scores.raw_dim());
        for ((&(node, label), s), mut ds) in labeled.iter().zip(scores.rows()).zip(d_scores.rows_mut()) {
            let label = label.ok_or_else(|| Error::Config(format!("node {node} has no label for L_Y")))?;
            if label >= n_way {
                return Err(Error::Config(format!("label {label} out of range for {n_way} classes")));
            }
            let (loss, g) = softmax_cross_entropy(&s.to_owned(), label);
            l_y += loss;
            ds.assign(&g);
        }
        add_at_b(&mut grad_theta.classifier.weight, &h, &d_scores);
        grad_theta.classifier.bias += &d_scores.sum_axis(Axis(0));
        general_mat_mul(1.0, &d_scores, &theta.classifier.weight.t(), 1.0, &mut d_h);
    }

    if want_d {
        let masked: Vec<PreparedEgo> = cached
            .iter()
            .zip(labeled)
            .map(|(c, &(node, _))| c.masked_input(settings.gamma, key.mask_seed(node)))
            .collect();
        let target_rate = if settings.target_dropout { settings.dropout } else { 0.0 };
        let targets = masked
            .iter()
            .zip(labeled)
            .map(|(m, &(node, _))| encode(phi, m, target_rate, settings.train_mode, &mut key.dropout(node, 1)))
            .collect::<Result<Vec<_>>>()?;
        let t = stack(targets.iter().map(|t| &t.output), width);

        let pred = &theta.predictor;
        let pre = h.dot(&pred.hidden.weight) + &pred.hidden.bias;
        let hidden = pre.mapv(|v| v.max(0.0));
        let p = hidden.dot(&pred.out.weight) + &pred.out.bias;
        let mut d_p = Array2::zeros(p.raw_dim());
        let mut d_t = Array2::zeros(t.raw_dim());
        for (((p_row, t_row), mut dp), mut dt) in p.rows().into_iter().zip(t.rows()).zip(d_p.rows_mut()).zip(d_t.rows_mut()) {
            let c = cosine_loss(&p_row.to_owned(), &t_row.to_owned());
            l_d += c.loss;
            dp.assign(&(&c.d_pred * beta));
            dt.assign(&c.d_target);
        }

        add_at_b(&mut grad_theta.predictor.out.weight, &hidden, &d_p);
        grad_theta.predictor.out.bias += &d_p.sum_axis(Axis(0));
        let mut d_hidden = d_p.dot(&pred.out.weight.t());
        d_hidden.zip_mut_with(&pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        add_at_b(&mut grad_theta.predictor.hidden.weight, &h, &d_hidden);
        grad_theta.predictor.hidden.bias += &d_hidden.sum_axis(Axis(0));
        general_mat_mul(1.0, &d_hidden, &pred.hidden.weight.t(), 1.0, &mut d_h);

        if settings.phi_grad {
            let pooled = stack(targets.iter().map(|t| &t.pooled), phi.w2.nrows());
            add_at_b(&mut grad_phi.w2, &pooled, &d_t);
            let d_pooled = d_t.dot(&phi.w2.t());
            for (trace, row) in targets.iter().zip(d_pooled.rows()) {
                trace.backward_pooled(row, &mut grad_phi);
            }
        }
    }

    if !labeled.is_empty() {
        let pooled = stack(traces.iter().map(|t| &t.pooled), theta.encoder.w2.nrows());
        add_at_b(&mut grad_theta.encoder.w2, &pooled, &d_h);
        let d_pooled = d_h.dot(&theta.encoder.w2.t());
        for (trace, row) in traces.iter().zip(d_pooled.rows()) {
            trace.backward_pooled(row, &mut grad_theta.encoder);
        }
    }

    let total = match terms {
        Terms::LabelOnly => l_y,
        Terms::DistillOnly => l_d,
        Terms::Both => l_y + beta * l_d,
    };
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss L_Y={l_y} L_D={l_d}")));
    }
    Ok(LossOutput {
        l_y,
        l_d,
        total,
        grad_theta,
        grad_phi,
    })
}

/// Cross-entropy summed over `(node, local label)` pairs, with θ gradients.
pub fn loss_y(
    cache: &EgoCache,
    nodes: &[(usize, usize)],
    theta: &Theta,
    settings: &LossSettings,
    key: StepKey,
) -> Result<(f64, Theta)> {
    let labeled: Vec<_> = nodes.iter().map(|&(n, l)| (n, Some(l))).collect();
    let phi = Encoder::zeros(theta.encoder.w1.nrows(), theta.encoder.w1.ncols());
    let out = compute(cache, &labeled, theta, &phi, settings, Terms::LabelOnly, key)?;
    Ok((out.l_y, out.grad_theta))
}

/// Negative cosine summed over nodes, with θ and φ gradients.
pub fn loss_d(
    cache: &EgoCache,
    nodes: &[usize],
    theta: &Theta,
    phi: &Encoder,
    settings: &LossSettings,
    key: StepKey,
) -> Result<(f64, Theta, Encoder)> {
    let unlabeled: Vec<_> = nodes.iter().map(|&n| (n, None)).collect();
    let out = compute(cache, &unlabeled, theta, phi, settings, Terms::DistillOnly, key)?;
    Ok((out.l_d, out.grad_theta, out.grad_phi))
}

/// `L = L_Y + beta * L_D`. With `beta == 0` the distillation branch is
/// skipped entirely and `L_D` is reported as zero.
pub fn loss_total(
    cache: &EgoCache,
    nodes: &[(usize, usize)],
    theta: &Theta,
    phi: &Encoder,
    settings: &LossSettings,
    key: StepKey,
) -> Result<LossOutput> {
    let labeled: Vec<_> = nodes.iter().map(|&(n, l)| (n, Some(l))).collect();
    let terms = if settings.beta == 0.0 { Terms::LabelOnly } else { Terms::Both };
    compute(cache, &labeled, theta, phi, settings, terms, key)
}

/// Eval-mode class scores for a node.
pub fn scores(cache: &EgoCache, node: usize, theta: &Theta) -> Result<ndarray::Array1<f64>> {
    let prepared = &cache.get(node)?.prepared;
    let trace = encode(&theta.encoder, prepared, 0.0, false, &mut Rng::seed_from_u64(0))?;
    Ok(classify(&theta.classifier, &trace.output))
}

/// Eval-mode predicted local label; ties go to the lowest index.
pub fn predict(cache: &EgoCache, node: usize, theta: &Theta) -> Result<usize> {
    Ok(argmax(scores(cache, node, theta)?.iter().copied()))
}
