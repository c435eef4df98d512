use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmedoids::kmedoids;
use crate::ood::shannon_entropy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Random,
    Uncertainty,
    Kmedoids,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 3] = [Self::Random, Self::Uncertainty, Self::Kmedoids];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Uncertainty => "uncertainty",
            Self::Kmedoids => "kmedoids",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown selection strategy `{s}`; expected one of: random, uncertainty, kmedoids"))
    }
}

/// Node representation used by k-medoids selection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    /// First-layer filter activations.
    #[default]
    Hidden,
    /// Two-hop propagated raw features.
    Featprop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<usize>,
    pub strategy: SelectionStrategy,
    pub budget: usize,
    pub seed: u64,
}

/// Uniform sample of `min(budget, |pool|)` nodes without replacement.
pub fn select_random(pool: &[usize], budget: usize, seed: u64) -> SelectionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = pool.to_vec();
    let (picked, _) = nodes.partial_shuffle(&mut rng, budget.min(pool.len()));
    SelectionResult {
        selected: picked.to_vec(),
        strategy: SelectionStrategy::Random,
        budget,
        seed,
    }
}

/// The `budget` pool nodes with the highest entropy of their probability
/// rows; ties go to the lower node id.
pub fn select_uncertainty(probs: &Array2<f64>, pool: &[usize], budget: usize) -> SelectionResult {
    let mut scored: Vec<(usize, f64)> = pool.iter().map(|&v| (v, shannon_entropy(probs.row(v)))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    SelectionResult {
        selected: scored.into_iter().take(budget).map(|(v, _)| v).collect(),
        strategy: SelectionStrategy::Uncertainty,
        budget,
        seed: 0,
    }
}

/// Medoids of a k-medoids clustering of the pool rows of `embeddings`
/// (indexed by node id), with `k = min(budget, |pool|)`.
///
/// With `fixed_clusters = Some(c)` the pool is clustered into
/// `max(c, budget)` groups and the medoids of the `budget` largest clusters
/// are returned.
pub fn select_kmedoids(
    embeddings: &Array2<f64>,
    pool: &[usize],
    budget: usize,
    seed: u64,
    fixed_clusters: Option<usize>,
) -> SelectionResult {
    let points = embeddings.select(Axis(0), pool);
    let k = fixed_clusters.map_or(budget, |c| c.max(budget)).min(pool.len());
    let fit = kmedoids(&points, k, seed);
    let sizes = fit.cluster_sizes();
    let mut slots: Vec<usize> = (0..fit.medoids.len()).collect();
    slots.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(pool[fit.medoids[a]].cmp(&pool[fit.medoids[b]])));
    SelectionResult {
        selected: slots.into_iter().take(budget).map(|s| pool[fit.medoids[s]]).collect(),
        strategy: SelectionStrategy::Kmedoids,
        budget,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn random_takes_whole_small_pool() {
        let r = select_random(&[4, 9, 2], 10, 1);
        let mut s = r.selected.clone();
        s.sort_unstable();
        assert_eq!(s, vec![2, 4, 9]);
        assert_eq!(select_random(&[4, 9, 2], 2, 7), select_random(&[4, 9, 2], 2, 7));
    }

    #[test]
    fn random_frequencies_are_uniform() {
        let pool: Vec<usize> = (100..120).collect();
        let (b, trials) = (5usize, 10_000usize);
        let mut counts = vec![0usize; pool.len()];
        for seed in 0..trials as u64 {
            for v in select_random(&pool, b, seed).selected {
                counts[v - 100] += 1;
            }
        }
        let p = b as f64 / pool.len() as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn uncertainty_prefers_uniform_rows() {
        let probs = ndarray::array![[1.0, 0.0, 0.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], [0.5, 0.5, 0.0]];
        assert_eq!(select_uncertainty(&probs, &[0, 1, 2], 3).selected, vec![1, 2, 0]);
        assert_eq!(select_uncertainty(&probs, &[0, 2], 1).selected, vec![2]);
    }

    #[test]
    fn uncertainty_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut probs = Array2::from_shape_fn((200, 4), |_| rng.random_range(0..4) as f64);
        for mut row in probs.rows_mut() {
            row[0] += 1.0;
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let pool: Vec<usize> = (0..200).filter(|v| v % 4 != 1).collect();
        let entropy = |v: usize| -> f64 {
            probs.row(v).iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
        };
        let mut oracle = pool.clone();
        oracle.sort_by(|&a, &b| entropy(b).partial_cmp(&entropy(a)).unwrap().then(a.cmp(&b)));
        oracle.truncate(30);
        assert_eq!(select_uncertainty(&probs, &pool, 30).selected, oracle);
    }

    #[test]
    fn fixed_cluster_mode_returns_budget_medoids() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let emb = Array2::from_shape_fn((300, 3), |_| rng.random_range(-1.0..1.0));
        let pool: Vec<usize> = (0..300).step_by(2).collect();
        let r = select_kmedoids(&emb, &pool, 20, 4, Some(48));
        assert_eq!(r.selected.len(), 20);
        let r = select_kmedoids(&emb, &pool, 60, 4, Some(48));
        assert_eq!(r.selected.len(), 60);
    }

    proptest! {
        #[test]
        fn medoids_are_distinct_pool_members(seed in any::<u64>(), b in 1usize..12, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let emb = Array2::from_shape_fn((n * 2, 2), |_| rng.random_range(0..3) as f64);
            let pool: Vec<usize> = (0..n * 2).step_by(2).collect();
            let r = select_kmedoids(&emb, &pool, b, seed, None);
            prop_assert_eq!(r.selected.len(), b.min(n));
            let mut s = r.selected.clone();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), b.min(n));
            prop_assert!(s.iter().all(|v| pool.contains(v)));
        }
    }
}
