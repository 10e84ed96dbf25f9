//! Weakly labeled pool and N-way K-shot task sampling.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::{stream, Purpose, Rng};

/// The only labels visible during meta-training: a fixed number of nodes per
/// meta-training class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<usize, Vec<usize>>", into = "BTreeMap<usize, Vec<usize>>")]
pub struct WeakLabelPool {
    classes: BTreeMap<usize, Vec<usize>>,
    labels_per_class: usize,
}

impl TryFrom<BTreeMap<usize, Vec<usize>>> for WeakLabelPool {
    type Error = String;

    fn try_from(classes: BTreeMap<usize, Vec<usize>>) -> std::result::Result<Self, String> {
        let labels_per_class = classes.values().next().map_or(0, Vec::len);
        if classes.values().any(|l| l.len() != labels_per_class) {
            return Err("pool lists must all have the same length".into());
        }
        let mut seen = std::collections::HashSet::new();
        if !classes.values().flatten().all(|n| seen.insert(*n)) {
            return Err("pool lists must be disjoint".into());
        }
        Ok(Self {
            classes,
            labels_per_class,
        })
    }
}

impl From<WeakLabelPool> for BTreeMap<usize, Vec<usize>> {
    fn from(p: WeakLabelPool) -> Self {
        p.classes
    }
}

impl WeakLabelPool {
    /// Samples `labels_per_class` nodes uniformly without replacement from
    /// every meta-training class.
    pub fn build(g: &Graph, labels_per_class: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Purpose::Pool, &[]);
        let mut classes = BTreeMap::new();
        for &class in &g.splits().train {
            let members = g.class_members(class);
            if members.len() < labels_per_class {
                return Err(Error::ClassTooSmall {
                    class,
                    available: members.len(),
                    required: labels_per_class,
                });
            }
            let mut picked: Vec<usize> = members.choose_multiple(&mut rng, labels_per_class).copied().collect();
            picked.sort_unstable();
            classes.insert(class, picked);
        }
        Ok(Self {
            classes,
            labels_per_class,
        })
    }

    pub fn labels_per_class(&self) -> usize {
        self.labels_per_class
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn nodes(&self, class: usize) -> &[usize] {
        self.classes.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.classes.values().any(|l| l.contains(&node))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One episode: `N` classes, `K` labeled support nodes per class and a
/// balanced query set. Local labels index into `class_ids`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaTask {
    pub class_ids: Vec<usize>,
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
}

impl MetaTask {
    pub fn n_way(&self) -> usize {
        self.class_ids.len()
    }

    pub fn support_nodes(&self) -> Vec<usize> {
        self.support.iter().map(|&(n, _)| n).collect()
    }

    pub fn query_nodes(&self) -> Vec<usize> {
        self.query.iter().map(|&(n, _)| n).collect()
    }
}

/// Episode shape shared by all samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskShape {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_total: usize,
}

impl TaskShape {
    fn query_per_class(&self) -> Result<usize> {
        if self.n_way == 0 || self.q_total % self.n_way != 0 {
            return Err(Error::UnbalancedQuery {
                q_total: self.q_total,
                n_way: self.n_way,
            });
        }
        Ok(self.q_total / self.n_way)
    }
}

/// Draws classes, then per class shuffles its candidates and takes `K`
/// support nodes followed by `Q/N` query nodes.
fn sample_task<'a>(
    classes: &[usize],
    candidates: impl Fn(usize) -> &'a [usize],
    shape: TaskShape,
    rng: &mut Rng,
) -> Result<MetaTask> {
    let per_class_query = shape.query_per_class()?;
    if classes.len() < shape.n_way {
        return Err(Error::NotEnoughClasses {
            available: classes.len(),
            required: shape.n_way,
        });
    }
    let class_ids: Vec<usize> = classes.choose_multiple(rng, shape.n_way).copied().collect();
    let need = shape.k_shot + per_class_query;
    let mut support = Vec::with_capacity(shape.n_way * shape.k_shot);
    let mut query = Vec::with_capacity(shape.q_total);
    for (local, &class) in class_ids.iter().enumerate() {
        let pool = candidates(class);
        if pool.len() < need {
            return Err(Error::ClassTooSmall {
                class,
                available: pool.len(),
                required: need,
            });
        }
        let mut nodes = pool.to_vec();
        nodes.shuffle(rng);
        support.extend(nodes[..shape.k_shot].iter().map(|&n| (n, local)));
        query.extend(nodes[shape.k_shot..need].iter().map(|&n| (n, local)));
    }
    Ok(MetaTask {
        class_ids,
        support,
        query,
    })
}

/// Meta-training task drawn entirely from the weak label pool.
pub fn sample_train_task(pool: &WeakLabelPool, shape: TaskShape, rng: &mut Rng) -> Result<MetaTask> {
    let classes: Vec<usize> = pool.classes().collect();
    sample_task(&classes, |c| pool.nodes(c), shape, rng)
}

/// Meta-test task drawn from all nodes of the meta-test classes.
pub fn sample_test_task(g: &Graph, shape: TaskShape, rng: &mut Rng) -> Result<MetaTask> {
    sample_task(&g.splits().test, |c| g.class_members(c), shape, rng)
}

/// Same protocol as [`sample_test_task`] over the validation classes.
pub fn sample_val_task(g: &Graph, shape: TaskShape, rng: &mut Rng) -> Result<MetaTask> {
    sample_task(&g.splits().val, |c| g.class_members(c), shape, rng)
}
