//! The four-file text format: edge list, feature CSV, label TSV, split JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{ClassSplits, Graph};
use crate::error::{Error, Result};

/// Paths of the four files making up a serialized graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl GraphFiles {
    /// Conventional file names inside a dataset directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            edges: dir.join("edges.txt"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.tsv"),
            splits: dir.join("splits.json"),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-blank, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_id(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("expected a non-negative integer, found {tok:?}")))
}

fn read_features(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (line, l) in content_lines(&text) {
        let mut count = 0;
        for tok in l.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("expected a real number, found {:?}", tok.trim())))?;
            data.push(v);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(Error::FeatureDimension {
                    row: rows,
                    expected: d,
                    found: count,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let dim = dim.unwrap_or(0);
    Array2::from_shape_vec((rows, dim), data).map_err(|e| Error::Shape(e.to_string()))
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (line, l) in content_lines(&text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(path, line, format!("expected two node ids, found {} fields", toks.len())));
        }
        edges.push((parse_id(path, line, toks[0])?, parse_id(path, line, toks[1])?));
    }
    Ok(edges)
}

fn read_labels(path: &Path, num_nodes: usize) -> Result<Vec<Option<usize>>> {
    let text = fs::read_to_string(path)?;
    let mut labels = vec![None; num_nodes];
    for (line, l) in content_lines(&text) {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(path, line, "expected \"node_id<TAB>class_id\""));
        }
        let node = parse_id(path, line, toks[0])?;
        let class = parse_id(path, line, toks[1])?;
        if node >= num_nodes {
            return Err(Error::NodeOutOfRange { node, num_nodes });
        }
        match labels[node] {
            Some(prev) if prev != class => {
                return Err(parse_err(path, line, format!("node {node} relabeled from {prev} to {class}")));
            }
            _ => labels[node] = Some(class),
        }
    }
    Ok(labels)
}

/// Loads and validates a graph from its four files.
pub fn load_graph(
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    split_path: impl AsRef<Path>,
) -> Result<Graph> {
    let features = read_features(feature_path.as_ref())?;
    let edges = read_edges(edge_path.as_ref())?;
    let labels = read_labels(label_path.as_ref(), features.nrows())?;
    let splits: ClassSplits = serde_json::from_str(&fs::read_to_string(split_path.as_ref())?)?;
    Graph::new(features, edges, labels, splits)
}

pub fn load_graph_dir(dir: impl AsRef<Path>) -> Result<Graph> {
    let f = GraphFiles::in_dir(dir);
    load_graph(&f.edges, &f.features, &f.labels, &f.splits)
}

/// Writes the four files. Reals use shortest round-trip formatting, so
/// reloading reproduces the graph exactly.
pub fn dump_graph(g: &Graph, files: &GraphFiles) -> Result<()> {
    let mut edges = String::new();
    for (u, v) in g.adjacency().edges() {
        writeln!(edges, "{u} {v}").unwrap();
    }
    let mut feats = String::new();
    for row in g.features().rows() {
        let mut first = true;
        for v in row {
            if !first {
                feats.push(',');
            }
            first = false;
            write!(feats, "{v:?}").unwrap();
        }
        feats.push('\n');
    }
    let mut labels = String::new();
    for (node, label) in g.labels().iter().enumerate() {
        if let Some(c) = label {
            writeln!(labels, "{node}\t{c}").unwrap();
        }
    }
    for path in [&files.edges, &files.features, &files.labels, &files.splits] {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&files.edges, edges)?;
    fs::write(&files.features, feats)?;
    fs::write(&files.labels, labels)?;
    fs::write(&files.splits, serde_json::to_string_pretty(g.splits())?)?;
    Ok(())
}
