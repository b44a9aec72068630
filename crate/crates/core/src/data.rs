//! Graph classification datasets in the TU text format, batching, and
//! stratified cross-validation folds.
//!
//! A dataset directory `{dir}/{name}/` holds four files, each one value (or
//! pair) per line:
//!
//! - `{name}_A.txt` — comma-separated 1-based node pairs, one directed
//!   entry per line; reciprocal and duplicate lines collapse into a single
//!   undirected unit-weight edge.
//! - `{name}_graph_indicator.txt` — the 1-based graph id of each node.
//! - `{name}_graph_labels.txt` — one integer class label per graph.
//! - `{name}_node_labels.txt` — one integer label per node.
//!
//! Raw label values are arbitrary integers; both node and graph labels are
//! remapped to dense 0-based indices by sorted distinct raw value. Node
//! features are the one-hot encoding of the remapped node label. Extra
//! files in the directory (edge labels, continuous node attributes) are
//! ignored.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Segments;
use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::sparse::SparseSym;

/// One labelled graph: adjacency, dense node labels, and one-hot features.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphRecord {
    pub n: usize,
    pub adjacency: SparseSym,
    /// Dense 0-based node labels.
    pub node_labels: Vec<usize>,
    /// Dense 0-based class label.
    pub graph_label: usize,
    /// One-hot encoding of `node_labels`, `n × x_in`.
    pub node_features: DenseMat,
}

/// A parsed dataset plus the label vocabularies needed to write it back.
#[derive(Clone, Debug, PartialEq)]
pub struct TuDataset {
    pub name: String,
    pub records: Vec<GraphRecord>,
    /// Number of distinct node labels, i.e. the input feature width.
    pub x_in: usize,
    pub n_classes: usize,
    /// Sorted distinct raw node label values; index = dense label.
    pub node_label_values: Vec<i64>,
    /// Sorted distinct raw graph label values; index = dense class.
    pub graph_label_values: Vec<i64>,
}

/// Summary statistics of a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub n_graphs: usize,
    pub n_classes: usize,
    pub max_nodes: usize,
    pub avg_nodes: f64,
    pub x_in: usize,
}

impl TuDataset {
    pub fn stats(&self) -> DatasetStats {
        let max_nodes = self.records.iter().map(|r| r.n).max().unwrap_or(0);
        let total: usize = self.records.iter().map(|r| r.n).sum();
        DatasetStats {
            n_graphs: self.records.len(),
            n_classes: self.n_classes,
            max_nodes,
            avg_nodes: total as f64 / self.records.len().max(1) as f64,
            x_in: self.x_in,
        }
    }

    /// Dense class label of every graph, in dataset order.
    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.graph_label).collect()
    }
}

/// Non-empty trimmed lines with their original 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::DatasetFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(text
        .lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let t = l.trim();
            (!t.is_empty()).then(|| (i + 1, t.to_string()))
        })
        .collect())
}

fn parse_int<T: std::str::FromStr>(path: &Path, line: usize, token: &str, what: &str) -> Result<T> {
    token.trim().parse().map_err(|_| Error::DatasetParse {
        path: path.to_path_buf(),
        line,
        reason: format!("expected {what}, found `{token}`"),
    })
}

/// Parse the dataset `{dir}/{name}` from TU-format text files.
pub fn parse_tu(dir: impl AsRef<Path>, name: &str) -> Result<TuDataset> {
    let base = dir.as_ref().join(name);
    let file = |suffix: &str| base.join(format!("{name}_{suffix}.txt"));

    // Node → graph membership (1-based graph ids in the file).
    let indicator_path = file("graph_indicator");
    let mut node_graph = Vec::new();
    for (line, text) in read_lines(&indicator_path)? {
        let gid: usize = parse_int(&indicator_path, line, &text, "a 1-based graph id")?;
        if gid == 0 {
            return Err(Error::DatasetParse {
                path: indicator_path.clone(),
                line,
                reason: "graph ids are 1-based; found 0".into(),
            });
        }
        node_graph.push(gid - 1);
    }
    let n_nodes = node_graph.len();
    let n_graphs = node_graph.iter().map(|&g| g + 1).max().unwrap_or(0);
    if n_graphs == 0 {
        return Err(Error::DatasetFile {
            path: indicator_path.clone(),
            reason: "dataset has no nodes".into(),
        });
    }

    // Raw graph labels, one per graph.
    let glabel_path = file("graph_labels");
    let mut raw_graph_labels = Vec::new();
    for (line, text) in read_lines(&glabel_path)? {
        raw_graph_labels.push(parse_int::<i64>(&glabel_path, line, &text, "an integer label")?);
    }
    if raw_graph_labels.len() != n_graphs {
        return Err(Error::DatasetFile {
            path: glabel_path.clone(),
            reason: format!(
                "{} labels for {} graphs (per the graph indicator)",
                raw_graph_labels.len(),
                n_graphs
            ),
        });
    }

    // Raw node labels, one per node.
    let nlabel_path = file("node_labels");
    let mut raw_node_labels = Vec::new();
    for (line, text) in read_lines(&nlabel_path)? {
        raw_node_labels.push(parse_int::<i64>(&nlabel_path, line, &text, "an integer label")?);
    }
    if raw_node_labels.len() != n_nodes {
        return Err(Error::DatasetFile {
            path: nlabel_path.clone(),
            reason: format!("{} labels for {} nodes", raw_node_labels.len(), n_nodes),
        });
    }

    // Dense label vocabularies, sorted by raw value.
    let node_label_values: Vec<i64> = raw_node_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let graph_label_values: Vec<i64> = raw_graph_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dense = |vocab: &[i64], raw: i64| vocab.binary_search(&raw).expect("raw value in vocab");

    // Per-graph local node numbering, in file order.
    let mut graph_nodes: Vec<Vec<usize>> = vec![Vec::new(); n_graphs];
    let mut local_of: Vec<usize> = vec![0; n_nodes];
    for (global, &g) in node_graph.iter().enumerate() {
        local_of[global] = graph_nodes[g].len();
        graph_nodes[g].push(global);
    }
    for (g, nodes) in graph_nodes.iter().enumerate() {
        if nodes.is_empty() {
            return Err(Error::DatasetFile {
                path: indicator_path.clone(),
                reason: format!("graph {} has no nodes", g + 1),
            });
        }
    }

    // Undirected edge sets per graph; reciprocal/duplicate lines collapse.
    let a_path = file("A");
    let mut graph_edges: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n_graphs];
    for (line, text) in read_lines(&a_path)? {
        let Some((a, b)) = text.split_once(',') else {
            return Err(Error::DatasetParse {
                path: a_path.clone(),
                line,
                reason: format!("expected `node, node`, found `{text}`"),
            });
        };
        let u: usize = parse_int(&a_path, line, a, "a 1-based node id")?;
        let v: usize = parse_int(&a_path, line, b, "a 1-based node id")?;
        for id in [u, v] {
            if id == 0 || id > n_nodes {
                return Err(Error::DatasetParse {
                    path: a_path.clone(),
                    line,
                    reason: format!("node id {id} outside 1..={n_nodes}"),
                });
            }
        }
        if u == v {
            return Err(Error::DatasetParse {
                path: a_path.clone(),
                line,
                reason: format!("self-loop on node {u}"),
            });
        }
        let (u, v) = (u - 1, v - 1);
        if node_graph[u] != node_graph[v] {
            return Err(Error::DatasetParse {
                path: a_path.clone(),
                line,
                reason: format!(
                    "edge joins graphs {} and {}",
                    node_graph[u] + 1,
                    node_graph[v] + 1
                ),
            });
        }
        let (lu, lv) = (local_of[u], local_of[v]);
        graph_edges[node_graph[u]].insert((lu.min(lv), lu.max(lv)));
    }

    let x_in = node_label_values.len();
    let mut records = Vec::with_capacity(n_graphs);
    for g in 0..n_graphs {
        let nodes = &graph_nodes[g];
        let n = nodes.len();
        let edges: Vec<(usize, usize)> = graph_edges[g].iter().copied().collect();
        let adjacency = SparseSym::from_undirected_edges(n, &edges)?;
        let node_labels: Vec<usize> = nodes
            .iter()
            .map(|&global| dense(&node_label_values, raw_node_labels[global]))
            .collect();
        let mut node_features = DenseMat::zeros(n, x_in);
        for (i, &l) in node_labels.iter().enumerate() {
            node_features[(i, l)] = 1.0;
        }
        records.push(GraphRecord {
            n,
            adjacency,
            node_labels,
            graph_label: dense(&graph_label_values, raw_graph_labels[g]),
            node_features,
        });
    }

    Ok(TuDataset {
        name: name.to_string(),
        records,
        x_in,
        n_classes: graph_label_values.len(),
        node_label_values,
        graph_label_values,
    })
}

/// Write a dataset back out in the TU text format, using the original raw
/// label values. Inverse of [`parse_tu`] up to edge-line order and
/// formatting.
pub fn write_tu(ds: &TuDataset, dir: impl AsRef<Path>) -> Result<()> {
    let base = dir.as_ref().join(&ds.name);
    fs::create_dir_all(&base).map_err(|e| io_err(&base, e))?;
    let file = |suffix: &str| base.join(format!("{}_{suffix}.txt", ds.name));

    let mut a = String::new();
    let mut indicator = String::new();
    let mut glabels = String::new();
    let mut nlabels = String::new();
    let mut offset = 0usize;
    for (g, rec) in ds.records.iter().enumerate() {
        for i in 0..rec.n {
            indicator.push_str(&format!("{}\n", g + 1));
            nlabels.push_str(&format!("{}\n", ds.node_label_values[rec.node_labels[i]]));
        }
        glabels.push_str(&format!("{}\n", ds.graph_label_values[rec.graph_label]));
        for i in 0..rec.n {
            for (j, _) in rec.adjacency.row(i) {
                // CSR stores both directions; emit each as its own line.
                a.push_str(&format!("{}, {}\n", offset + i + 1, offset + j + 1));
            }
        }
        offset += rec.n;
    }
    for (path, content) in [
        (file("A"), a),
        (file("graph_indicator"), indicator),
        (file("graph_labels"), glabels),
        (file("node_labels"), nlabels),
    ] {
        let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        f.write_all(content.as_bytes()).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A mini-batch: several graphs packed into one block-diagonal system.
pub struct Batch {
    pub segments: Rc<Segments>,
    /// Rescaled Laplacian of the block-diagonal adjacency.
    pub lap: Rc<SparseSym>,
    /// Stacked node features, `Σnᵢ × x_in`.
    pub features: DenseMat,
    /// Dense class label per graph.
    pub labels: Vec<usize>,
    pub n_graphs: usize,
}

/// Pack graphs into one batch. Graph boundaries become segments; the
/// block-diagonal structure keeps graphs from interacting.
pub fn make_batch(records: &[&GraphRecord]) -> Result<Batch> {
    if records.is_empty() {
        return Err(Error::EmptySegment { segment: 0 });
    }
    let sizes: Vec<usize> = records.iter().map(|r| r.n).collect();
    let segments = Rc::new(Segments::from_sizes(&sizes)?);
    let adjs: Vec<&SparseSym> = records.iter().map(|r| &r.adjacency).collect();
    let lap = Rc::new(SparseSym::block_diag(&adjs).rescaled_laplacian()?);
    let feats: Vec<&DenseMat> = records.iter().map(|r| &r.node_features).collect();
    let mut features = DenseMat::zeros(segments.n_rows(), records[0].node_features.cols);
    let mut at = 0;
    for f in feats {
        for i in 0..f.rows {
            features.row_mut(at + i).copy_from_slice(f.row(i));
        }
        at += f.rows;
    }
    let labels = records.iter().map(|r| r.graph_label).collect();
    Ok(Batch {
        segments,
        lap,
        features,
        labels,
        n_graphs: records.len(),
    })
}

/// A k-fold partition of dataset indices.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Train/test index split where fold `f` is the held-out test set.
    pub fn train_test(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let test = self.folds[f].clone();
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        (train, test)
    }
}

/// Stratified k-fold split: indices are grouped by class, each class is
/// shuffled, and a single round-robin cursor deals indices across folds so
/// both overall fold sizes and per-class counts differ by at most one.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config {
            key: "folds".into(),
            reason: format!("need at least 2 folds, got {k}"),
        });
    }
    if labels.len() < k {
        return Err(Error::Config {
            key: "folds".into(),
            reason: format!("{k} folds for only {} graphs", labels.len()),
        });
    }
    let n_classes = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut cursor = 0usize;
    for class in by_class.iter_mut() {
        class.shuffle(&mut rng);
        for &idx in class.iter() {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    Ok(FoldPlan { folds })
}
