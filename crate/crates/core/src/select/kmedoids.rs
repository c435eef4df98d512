//! Alternating k-medoids over Euclidean distances with k-medoids++ seeding.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::NormAdj;

const MAX_ITERS: usize = 100;

/// `Â² X`: raw features propagated two hops.
pub fn featprop_embeddings(adj: &NormAdj, x: &Array2<f64>) -> Array2<f64> {
    adj.matmul(&adj.matmul(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMedoidsFit {
    /// Medoids as positions into the point list.
    pub medoids: Vec<usize>,
    /// Medoid slot of every point.
    pub assignment: Vec<usize>,
    pub cost: f64,
    pub iterations: usize,
}

impl KMedoidsFit {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.medoids.len()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Clusters `points` (rows) into `min(k, n)` groups. Deterministic in `seed`.
pub fn kmedoids(points: &Array2<f64>, k: usize, seed: u64) -> KMedoidsFit {
    let n = points.nrows();
    let k = k.min(n);
    if k == 0 {
        return KMedoidsFit {
            medoids: Vec::new(),
            assignment: vec![0; n],
            cost: 0.0,
            iterations: 0,
        };
    }
    let d = |i: usize, j: usize| dist(points.row(i), points.row(j));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-medoids++ seeding
    let mut medoids = vec![rng.random_range(0..n)];
    let mut is_medoid = vec![false; n];
    is_medoid[medoids[0]] = true;
    let mut nearest: Vec<f64> = (0..n).map(|i| d(i, medoids[0])).collect();
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n).map(|i| if is_medoid[i] { 0.0 } else { nearest[i] * nearest[i] }).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            // every remaining point duplicates a medoid
            let free: Vec<usize> = (0..n).filter(|&i| !is_medoid[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        medoids.push(pick);
        is_medoid[pick] = true;
        for (i, near) in nearest.iter_mut().enumerate() {
            *near = near.min(d(i, pick));
        }
    }

    let assign = |medoids: &[usize]| -> (Vec<usize>, f64) {
        let mut cost = 0.0;
        let assignment = (0..n)
            .map(|i| {
                let mut best = (0, f64::INFINITY);
                for (slot, &m) in medoids.iter().enumerate() {
                    let dm = if i == m { 0.0 } else { d(i, m) };
                    if dm < best.1 {
                        best = (slot, dm);
                    }
                }
                cost += best.1;
                best.0
            })
            .collect();
        (assignment, cost)
    };

    let (mut assignment, mut cost) = assign(&medoids);
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        iterations += 1;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &a) in assignment.iter().enumerate() {
            members[a].push(i);
        }
        let mut changed = false;
        for (slot, group) in members.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let within = |c: usize| group.iter().map(|&i| d(i, c)).sum::<f64>();
            let mut best = (medoids[slot], within(medoids[slot]));
            for &c in group {
                let s = within(c);
                if s < best.1 {
                    best = (c, s);
                }
            }
            if best.0 != medoids[slot] {
                medoids[slot] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        (assignment, cost) = assign(&medoids);
    }

    KMedoidsFit {
        medoids,
        assignment,
        cost,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn three_clusters(seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [(0.0, 0.0), (20.0, 0.0), (0.0, 20.0)];
        let mut rows = Vec::new();
        for (ci, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..(4 + ci) {
                rows.push(cx + rng.random_range(-1.0..1.0));
                rows.push(cy + rng.random_range(-1.0..1.0));
            }
        }
        Array2::from_shape_vec((rows.len() / 2, 2), rows).unwrap()
    }

    fn cost_of(points: &Array2<f64>, medoids: &[usize]) -> f64 {
        (0..points.nrows())
            .map(|i| medoids.iter().map(|&m| dist(points.row(i), points.row(m))).fold(f64::INFINITY, f64::min))
            .sum()
    }

    #[test]
    fn matches_exhaustive_search_on_separated_clusters() {
        for seed in 0..10 {
            let p = three_clusters(seed);
            let n = p.nrows();
            assert!(n <= 15);
            let mut best = (f64::INFINITY, vec![]);
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        let cost = cost_of(&p, &[a, b, c]);
                        if cost < best.0 {
                            best = (cost, vec![a, b, c]);
                        }
                    }
                }
            }
            let fit = kmedoids(&p, 3, seed);
            let mut got = fit.medoids.clone();
            got.sort_unstable();
            assert_eq!(got, best.1, "seed {seed}");
            assert!((fit.cost - best.0).abs() < 1e-9);
            let mut sizes = fit.cluster_sizes();
            sizes.sort_unstable();
            assert_eq!(sizes, vec![4, 5, 6]);
        }
    }

    #[test]
    fn identical_points_give_distinct_medoids() {
        let p = Array2::from_elem((8, 3), 1.5);
        let fit = kmedoids(&p, 4, 3);
        let mut m = fit.medoids.clone();
        m.sort_unstable();
        m.dedup();
        assert_eq!(m.len(), 4);
        assert_eq!(fit.cost, 0.0);
    }

    #[test]
    fn k_larger_than_n_is_clamped() {
        let p = ndarray::array![[0.0], [1.0]];
        let fit = kmedoids(&p, 5, 0);
        assert_eq!(fit.medoids.len(), 2);
        assert_eq!(fit.cost, 0.0);
    }

    #[test]
    fn no_worse_than_random_medoids() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let p = Array2::from_shape_fn((120, 5), |_| rng.random_range(-1.0..1.0));
        for seed in 0..20u64 {
            let fit = kmedoids(&p, 8, seed);
            let mut r = ChaCha8Rng::seed_from_u64(seed + 1000);
            let random = rand::seq::index::sample(&mut r, 120, 8).into_vec();
            assert!(fit.cost <= cost_of(&p, &random) + 1e-12, "seed {seed}");
            assert!((fit.cost - cost_of(&p, &fit.medoids)).abs() < 1e-9);
        }
    }
}
