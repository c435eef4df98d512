//! Stochastic block model fixtures with Gaussian block features.
//!
//! Block `c` is class `c`. Node features are `mean_scale * e_c + N(0, noise_std²)`
//! so every block's mean lies on its own coordinate axis (requires
//! `feature_dim >= #blocks`).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::TagGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    /// Edge probability within a block.
    pub p_in: f64,
    /// Edge probability across blocks.
    pub p_out: f64,
    pub feature_dim: usize,
    pub mean_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Blocks whose features carry no mean offset.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_mean_blocks: Vec<usize>,
}

impl SbmSpec {
    /// Six blocks of 100 nodes, intra-block edge probability 0.05 and
    /// inter-block 0.005. Blocks 4 and 5 are zero-mean; pair with ID classes
    /// `[0, 1, 2, 3]`.
    pub fn six_blocks(seed: u64) -> Self {
        Self {
            block_sizes: vec![100; 6],
            p_in: 0.05,
            p_out: 0.005,
            feature_dim: 16,
            mean_scale: 3.0,
            noise_std: 1.0,
            seed,
            zero_mean_blocks: vec![4, 5],
        }
    }
}

pub fn sbm_graph(spec: &SbmSpec) -> TagGraph {
    let blocks = spec.block_sizes.len();
    assert!(spec.feature_dim >= blocks, "feature_dim must cover one axis per block");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = spec
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let n = labels.len();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { spec.p_in } else { spec.p_out };
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_std).expect("noise_std must be finite and >= 0");
    let mut features = Array2::zeros((n, spec.feature_dim));
    for (v, mut row) in features.outer_iter_mut().enumerate() {
        row.iter_mut().for_each(|x| *x = noise.sample(&mut rng));
        if !spec.zero_mean_blocks.contains(&labels[v]) {
            row[labels[v]] += spec.mean_scale;
        }
    }
    let texts = labels
        .iter()
        .enumerate()
        .map(|(v, c)| format!("Synthetic document {v} drawn from topic block {c}."))
        .collect();
    TagGraph::new(n, edges, features, labels, blocks, Some(texts)).expect("generated graph is valid")
}
