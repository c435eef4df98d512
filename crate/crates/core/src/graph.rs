//! Graph data model, class partitions, node splits and the symmetric
//! normalized adjacency operator shared by every GCN layer.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("feature matrix has {rows} rows but graph has {nodes} nodes")]
    FeatureRows { rows: usize, nodes: usize },
    #[error("non-finite feature at row {0}, column {1}")]
    NonFiniteFeature(usize, usize),
    #[error("label vector has {labels} entries but graph has {nodes} nodes")]
    LabelCount { labels: usize, nodes: usize },
    #[error("node {node} has label {label} but only {classes} classes exist")]
    LabelOutOfRange { node: usize, label: usize, classes: usize },
    #[error("text vector has {texts} entries but graph has {nodes} nodes")]
    TextCount { texts: usize, nodes: usize },
    #[error("invalid class split: {0}")]
    InvalidClassSplit(String),
    #[error("unknown dataset `{0}`; known datasets: cora, citeseer, pubmed, wiki-cs")]
    UnknownDataset(String),
    #[error("insufficient nodes for splits: {id_available} ID and {ood_available} OOD available, need {id_needed} and {ood_needed}")]
    InsufficientNodes {
        id_available: usize,
        ood_available: usize,
        id_needed: usize,
        ood_needed: usize,
    },
    #[error("invalid split assignment: {0}")]
    InvalidSplit(String),
}

/// A text-attributed graph: structure, dense node features, ground-truth
/// labels over the full class list and optional raw node texts.
#[derive(Debug, Clone)]
pub struct TagGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    texts: Option<Vec<String>>,
}

impl TagGraph {
    /// Builds a graph, canonicalizing the edge list: each undirected edge is
    /// stored once as `(min, max)`, duplicates and self-loops are dropped.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        texts: Option<Vec<String>>,
    ) -> Result<Self, GraphError> {
        let mut canon = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(GraphError::EdgeOutOfRange(a, b, num_nodes));
            }
            if a != b {
                canon.insert((a.min(b), a.max(b)));
            }
        }
        if features.nrows() != num_nodes {
            return Err(GraphError::FeatureRows {
                rows: features.nrows(),
                nodes: num_nodes,
            });
        }
        if let Some(((r, c), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GraphError::NonFiniteFeature(r, c));
        }
        if labels.len() != num_nodes {
            return Err(GraphError::LabelCount {
                labels: labels.len(),
                nodes: num_nodes,
            });
        }
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(GraphError::LabelOutOfRange {
                node,
                label,
                classes: num_classes,
            });
        }
        if let Some(t) = &texts {
            if t.len() != num_nodes {
                return Err(GraphError::TextCount {
                    texts: t.len(),
                    nodes: num_nodes,
                });
            }
        }
        Ok(Self {
            num_nodes,
            edges: canon.into_iter().collect(),
            features,
            labels,
            num_classes,
            texts,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn texts(&self) -> Option<&[String]> {
        self.texts.as_deref()
    }

    pub fn text(&self, node: usize) -> Option<&str> {
        self.texts.as_ref().map(|t| t[node].as_str())
    }
}

/// Ordered class names plus the partition into K in-distribution classes and
/// the remaining out-of-distribution classes.
///
/// The filter alphabet is `0..K` for the ID classes (in `id_class_indices`
/// order) with index `K` meaning "unknown".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSpace {
    class_names: Vec<String>,
    id_class_indices: Vec<usize>,
    ood_class_indices: Vec<usize>,
    /// full class index -> dense ID index
    dense: Vec<Option<usize>>,
}

impl ClassSpace {
    pub fn new(class_names: Vec<String>, id_class_indices: Vec<usize>) -> Result<Self, GraphError> {
        let n = class_names.len();
        if id_class_indices.len() < 2 {
            return Err(GraphError::InvalidClassSplit(format!(
                "need at least two ID classes, got {}",
                id_class_indices.len()
            )));
        }
        let mut dense = vec![None; n];
        for (pos, &c) in id_class_indices.iter().enumerate() {
            if c >= n {
                return Err(GraphError::InvalidClassSplit(format!(
                    "ID class {c} out of range for {n} classes"
                )));
            }
            if dense[c].is_some() {
                return Err(GraphError::InvalidClassSplit(format!("ID class {c} listed twice")));
            }
            dense[c] = Some(pos);
        }
        let ood_class_indices = (0..n).filter(|&c| dense[c].is_none()).collect();
        Ok(Self {
            class_names,
            id_class_indices,
            ood_class_indices,
            dense,
        })
    }

    /// Class space with generic names `class_0..class_{n-1}`.
    pub fn anonymous(num_classes: usize, id_class_indices: Vec<usize>) -> Result<Self, GraphError> {
        Self::new(
            (0..num_classes).map(|c| format!("class_{c}")).collect(),
            id_class_indices,
        )
    }

    /// Class space for one of the benchmark citation/web graphs.
    pub fn for_dataset(dataset: &str, class_names: Vec<String>) -> Result<Self, GraphError> {
        Self::new(class_names, known_id_classes(dataset)?.to_vec())
    }

    pub fn k(&self) -> usize {
        self.id_class_indices.len()
    }

    /// Index of the "unknown" label in the K+1 alphabet.
    pub fn unknown(&self) -> usize {
        self.k()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn id_class_indices(&self) -> &[usize] {
        &self.id_class_indices
    }

    pub fn ood_class_indices(&self) -> &[usize] {
        &self.ood_class_indices
    }

    pub fn id_class_names(&self) -> Vec<&str> {
        self.id_class_indices
            .iter()
            .map(|&c| self.class_names[c].as_str())
            .collect()
    }

    pub fn is_id(&self, full_class: usize) -> bool {
        self.dense_index(full_class).is_some()
    }

    /// Dense ID index (0..K) of a full class index, `None` for OOD classes.
    pub fn dense_index(&self, full_class: usize) -> Option<usize> {
        self.dense.get(full_class).copied().flatten()
    }

    /// Label of a node in the K+1 alphabet given its true full class.
    pub fn open_label(&self, full_class: usize) -> usize {
        self.dense_index(full_class).unwrap_or(self.k())
    }
}

/// Fixed ID class indices of the benchmark datasets.
pub fn known_id_classes(dataset: &str) -> Result<&'static [usize], GraphError> {
    let key: String = dataset
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect();
    match key.as_str() {
        "cora" => Ok(&[2, 4, 5, 6]),
        "citeseer" => Ok(&[0, 1, 2]),
        "wikics" => Ok(&[1, 4, 5, 6]),
        "pubmed" => Ok(&[0, 1]),
        _ => Err(GraphError::UnknownDataset(dataset.to_string())),
    }
}

/// Split sizes. Validation holds `val_multiple * K` ID nodes and as many OOD
/// nodes; test holds `test_id` ID and `test_ood` OOD nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub val_multiple: usize,
    pub test_id: usize,
    pub test_ood: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            val_multiple: 10,
            test_id: 500,
            test_ood: 500,
        }
    }
}

/// Disjoint validation / test / candidate node sets. All three are stored
/// sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub candidate: Vec<usize>,
    pub seed: u64,
}

impl SplitAssignment {
    /// Checks disjointness and range against a graph.
    pub fn validate(&self, num_nodes: usize) -> Result<(), GraphError> {
        let mut seen = vec![false; num_nodes];
        for (name, set) in [("val", &self.val), ("test", &self.test), ("candidate", &self.candidate)] {
            for &v in set {
                if v >= num_nodes {
                    return Err(GraphError::InvalidSplit(format!("{name} node {v} out of range")));
                }
                if seen[v] {
                    return Err(GraphError::InvalidSplit(format!("node {v} appears in two sets")));
                }
                seen[v] = true;
            }
        }
        Ok(())
    }

    /// Membership mask of the evaluation nodes (val ∪ test).
    pub fn held_out_mask(&self, num_nodes: usize) -> Vec<bool> {
        let mut mask = vec![false; num_nodes];
        for &v in self.val.iter().chain(&self.test) {
            mask[v] = true;
        }
        mask
    }
}

pub fn make_splits(
    graph: &TagGraph,
    classes: &ClassSpace,
    seed: u64,
) -> Result<SplitAssignment, GraphError> {
    make_splits_with(graph, classes, seed, SplitSizes::default())
}

/// Samples validation and test nodes uniformly without replacement, within
/// the ID and OOD pools separately. Deterministic in `seed`.
pub fn make_splits_with(
    graph: &TagGraph,
    classes: &ClassSpace,
    seed: u64,
    sizes: SplitSizes,
) -> Result<SplitAssignment, GraphError> {
    let (mut id_pool, mut ood_pool): (Vec<usize>, Vec<usize>) =
        (0..graph.num_nodes()).partition(|&v| classes.is_id(graph.label(v)));
    let val_n = sizes.val_multiple * classes.k();
    let id_needed = val_n + sizes.test_id;
    let ood_needed = val_n + sizes.test_ood;
    if id_pool.len() < id_needed || ood_pool.len() < ood_needed {
        return Err(GraphError::InsufficientNodes {
            id_available: id_pool.len(),
            ood_available: ood_pool.len(),
            id_needed,
            ood_needed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    id_pool.shuffle(&mut rng);
    ood_pool.shuffle(&mut rng);

    let mut val: Vec<usize> = id_pool[..val_n].iter().chain(&ood_pool[..val_n]).copied().collect();
    let mut test: Vec<usize> = id_pool[val_n..id_needed]
        .iter()
        .chain(&ood_pool[val_n..ood_needed])
        .copied()
        .collect();
    val.sort_unstable();
    test.sort_unstable();

    let mut taken = vec![false; graph.num_nodes()];
    for &v in val.iter().chain(&test) {
        taken[v] = true;
    }
    let candidate = (0..graph.num_nodes()).filter(|&v| !taken[v]).collect();
    Ok(SplitAssignment {
        val,
        test,
        candidate,
        seed,
    })
}

/// Sparse symmetric `D^{-1/2} (A + I) D^{-1/2}` in CSR form. Column indices
/// within each row are ascending, so products have a fixed reduction order.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

pub fn build_normalized_adjacency(graph: &TagGraph) -> NormAdj {
    let n = graph.num_nodes();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in graph.edges() {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    // degree of A + I
    let inv_sqrt: Vec<f64> = neighbors
        .iter()
        .map(|nb| 1.0 / ((nb.len() + 1) as f64).sqrt())
        .collect();

    let mut entries: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, inv_sqrt[i] * inv_sqrt[i])]).collect();
    for &(a, b) in graph.edges() {
        let w = inv_sqrt[a] * inv_sqrt[b];
        entries[a].push((b, w));
        entries[b].push((a, w));
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for mut row in entries {
        row.sort_unstable_by_key(|&(c, _)| c);
        for (c, w) in row {
            cols.push(c);
            vals.push(w);
        }
        row_ptr.push(cols.len());
    }
    NormAdj { row_ptr, cols, vals }
}

impl NormAdj {
    pub fn num_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Non-zero entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    /// `Â · m` for a dense matrix with `num_nodes` rows.
    pub fn matmul(&self, m: &Array2<f64>) -> Array2<f64> {
        assert_eq!(m.nrows(), self.num_nodes(), "row count mismatch in sparse product");
        let mut out = Array2::zeros((m.nrows(), m.ncols()));
        for (i, mut out_row) in out.outer_iter_mut().enumerate() {
            for (j, w) in self.row(i) {
                out_row.scaled_add(w, &m.row(j));
            }
        }
        out
    }

    pub fn matvec(&self, v: &Array1<f64>) -> Array1<f64> {
        assert_eq!(v.len(), self.num_nodes(), "length mismatch in sparse product");
        Array1::from_iter((0..self.num_nodes()).map(|i| self.row(i).map(|(j, w)| w * v[j]).sum()))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for (j, w) in self.row(i) {
                d[[i, j]] = w;
            }
        }
        d
    }
}
