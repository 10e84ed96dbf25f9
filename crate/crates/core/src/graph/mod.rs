//! Immutable attributed graphs and the neighborhood queries built on them.

mod io;
mod sbm;

use std::collections::{BTreeMap, HashMap, VecDeque};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{dump_graph, load_graph, load_graph_dir, GraphFiles};
pub use sbm::{generate_sbm, SbmConfig};

/// Class ids assigned to the meta-train, validation and meta-test phases.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClassSplits {
    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for &c in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(c) {
                return Err(Error::OverlappingSplits { class: c });
            }
        }
        Ok(())
    }

    pub fn contains(&self, class: usize) -> bool {
        self.train.contains(&class) || self.val.contains(&class) || self.test.contains(&class)
    }
}

/// Symmetric 0/1 adjacency in compressed-row form. Rows are sorted, no
/// self-loops, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrAdjacency {
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl CsrAdjacency {
    /// Builds from an arbitrary edge list: symmetrizes, deduplicates, drops
    /// self-loops.
    fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (u, v) in edges {
            for n in [u, v] {
                if n >= num_nodes {
                    return Err(Error::NodeOutOfRange { node: n, num_nodes });
                }
            }
            if u == v {
                continue;
            }
            rows[u].push(v);
            rows[v].push(u);
        }
        let mut indptr = Vec::with_capacity(num_nodes + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            indices.extend(row);
            indptr.push(indices.len());
        }
        Ok(Self { indptr, indices })
    }

    pub fn num_nodes(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.indices[self.indptr[node]..self.indptr[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.indptr[node + 1] - self.indptr[node]
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u).iter().copied().filter(move |&v| u < v).map(move |v| (u, v))
        })
    }
}

/// An undirected attributed graph with optional per-node labels and a
/// train/validation/test partition of its classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: CsrAdjacency,
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    splits: ClassSplits,
    members: BTreeMap<usize, Vec<usize>>,
}

impl Graph {
    /// Validates and assembles a graph. The node count is the number of
    /// feature rows; edges are symmetrized and deduplicated.
    pub fn new(
        features: Array2<f64>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Vec<Option<usize>>,
        splits: ClassSplits,
    ) -> Result<Self> {
        let num_nodes = features.nrows();
        if labels.len() != num_nodes {
            return Err(Error::Shape(format!(
                "{} labels for {} nodes",
                labels.len(),
                num_nodes
            )));
        }
        splits.validate()?;
        let adjacency = CsrAdjacency::from_edges(num_nodes, edges)?;
        let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (node, label) in labels.iter().enumerate() {
            if let Some(class) = *label {
                if !splits.contains(class) {
                    return Err(Error::UnknownClass { node, class });
                }
                members.entry(class).or_default().push(node);
            }
        }
        Ok(Self {
            adjacency,
            features,
            labels,
            splits,
            members,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.num_edges()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn adjacency(&self) -> &CsrAdjacency {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature(&self, node: usize) -> ArrayView1<'_, f64> {
        self.features.row(node)
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels[node]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn splits(&self) -> &ClassSplits {
        &self.splits
    }

    /// Nodes carrying `class`, ascending. Empty for unknown classes.
    pub fn class_members(&self, class: usize) -> &[usize] {
        self.members.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.num_nodes() {
            return Err(Error::NodeOutOfRange {
                node,
                num_nodes: self.num_nodes(),
            });
        }
        Ok(())
    }

    /// Nodes at shortest-path distance `1..=k` from `node`, ascending.
    pub fn k_hop_neighbors(&self, node: usize, k: usize) -> Result<Vec<usize>> {
        self.check_node(node)?;
        Ok(self.neighborhood(&[node], k))
    }

    /// Multi-source variant: nodes within distance `1..=k` of the nearest
    /// source, excluding the sources themselves, ascending. Out-of-range
    /// sources must be checked by the caller.
    pub fn neighborhood(&self, sources: &[usize], k: usize) -> Vec<usize> {
        let mut dist: HashMap<usize, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist.insert(s, 0).is_none() {
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if du == k {
                continue;
            }
            for &v in self.adjacency.neighbors(u) {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(du + 1);
                    queue.push_back(v);
                }
            }
        }
        let mut out: Vec<usize> = dist.into_iter().filter(|&(_, d)| d > 0).map(|(n, _)| n).collect();
        out.sort_unstable();
        out
    }

    /// Dense induced 0/1 adjacency over `ids` in the given order.
    pub fn induced_adjacency(&self, ids: &[usize]) -> Array2<f64> {
        let local: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let mut a = Array2::zeros((ids.len(), ids.len()));
        for (i, &g) in ids.iter().enumerate() {
            for v in self.adjacency.neighbors(g) {
                if let Some(&j) = local.get(v) {
                    a[[i, j]] = 1.0;
                }
            }
        }
        a
    }

    /// Feature rows of `ids`, in order.
    pub fn gather_features(&self, ids: &[usize]) -> Array2<f64> {
        self.features.select(ndarray::Axis(0), ids)
    }

    /// The 2-hop ego subgraph of `node`: center first, then neighbors by
    /// ascending global id.
    pub fn ego_subgraph(&self, node: usize) -> Result<EgoSubgraph> {
        self.check_node(node)?;
        let mut global_ids = Vec::with_capacity(1 + self.adjacency.degree(node));
        global_ids.push(node);
        global_ids.extend(self.neighborhood(&[node], 2));
        Ok(EgoSubgraph {
            center: 0,
            adjacency: self.induced_adjacency(&global_ids),
            features: self.gather_features(&global_ids),
            global_ids,
        })
    }
}

/// Induced 2-hop neighborhood of a single node, the unit the encoders see.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoSubgraph {
    pub center: usize,
    pub global_ids: Vec<usize>,
    pub adjacency: Array2<f64>,
    pub features: Array2<f64>,
}

impl EgoSubgraph {
    pub fn len(&self) -> usize {
        self.global_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_ids.is_empty()
    }
}
