use ndarray::{Array2, Zip};
use rand::distr::{Distribution, Uniform};
use rand::Rng;

use super::TrainError;
use crate::graph::NormAdj;

/// Weights of a two-layer GCN.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
}

impl GcnModel {
    pub fn zeros(feature_dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            w0: Array2::zeros((feature_dim, hidden_dim)),
            w1: Array2::zeros((hidden_dim, out_dim)),
        }
    }

    /// Glorot-uniform initialization, `U(-r, r)` with `r = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(
        feature_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w0: glorot_matrix(feature_dim, hidden_dim, rng),
            w1: glorot_matrix(hidden_dim, out_dim, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w0.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w0.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w0.iter().chain(self.w1.iter()).all(|v| v.is_finite())
    }
}

fn glorot_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-r, r).expect("finite range");
    let mut m = Array2::zeros((rows, cols));
    m.iter_mut().for_each(|v| *v = dist.sample(rng));
    m
}

/// Per-unit multipliers applied to H1: 0 for dropped units and `1/(1-p)` for
/// kept ones (inverted dropout).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Array2<f64>);

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Self {
        let scale = 1.0 / (1.0 - p);
        let mut m = Array2::zeros((rows, cols));
        m.iter_mut().for_each(|v| {
            let u: f64 = rng.random();
            *v = if u >= p { scale } else { 0.0 };
        });
        Self(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnActivations {
    /// Post-ReLU first-layer output, before dropout.
    pub h1: Array2<f64>,
    /// Second-layer output with no nonlinearity.
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnGradients {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
}

fn check_shapes(model: &GcnModel, adj: &NormAdj, x: &Array2<f64>) -> Result<(), TrainError> {
    if x.nrows() != adj.num_nodes() {
        return Err(TrainError::ShapeMismatch(format!(
            "features have {} rows, adjacency has {} nodes",
            x.nrows(),
            adj.num_nodes()
        )));
    }
    if x.ncols() != model.feature_dim() {
        return Err(TrainError::ShapeMismatch(format!(
            "features have {} columns, model expects {}",
            x.ncols(),
            model.feature_dim()
        )));
    }
    if model.w1.nrows() != model.hidden_dim() {
        return Err(TrainError::ShapeMismatch(format!(
            "W1 has {} rows but hidden dim is {}",
            model.w1.nrows(),
            model.hidden_dim()
        )));
    }
    Ok(())
}

/// Forward pass. `mask` is `Some` only in training mode.
pub fn forward(
    model: &GcnModel,
    adj: &NormAdj,
    x: &Array2<f64>,
    mask: Option<&DropoutMask>,
) -> Result<GcnActivations, TrainError> {
    check_shapes(model, adj, x)?;
    Ok(forward_propagated(model, adj, &adj.matmul(x), mask))
}

/// Forward pass from precomputed `Â X`.
pub(crate) fn forward_propagated(
    model: &GcnModel,
    adj: &NormAdj,
    ax: &Array2<f64>,
    mask: Option<&DropoutMask>,
) -> GcnActivations {
    let h1 = ax.dot(&model.w0).mapv_into(|v| v.max(0.0));
    let logits = adj.matmul(&apply_mask(&h1, mask)).dot(&model.w1);
    GcnActivations { h1, logits }
}

fn apply_mask(h1: &Array2<f64>, mask: Option<&DropoutMask>) -> Array2<f64> {
    match mask {
        Some(DropoutMask(m)) => h1 * m,
        None => h1.clone(),
    }
}

/// Gradients of the loss with respect to both weight matrices, given the
/// upstream gradient on the logits. Adds `weight_decay * W` to each.
pub fn backward(
    model: &GcnModel,
    adj: &NormAdj,
    x: &Array2<f64>,
    acts: &GcnActivations,
    grad_logits: &Array2<f64>,
    mask: Option<&DropoutMask>,
    weight_decay: f64,
) -> Result<GcnGradients, TrainError> {
    check_shapes(model, adj, x)?;
    if grad_logits.dim() != acts.logits.dim() {
        return Err(TrainError::ShapeMismatch(format!(
            "grad_logits is {:?}, logits are {:?}",
            grad_logits.dim(),
            acts.logits.dim()
        )));
    }
    Ok(backward_propagated(
        model,
        adj,
        &adj.matmul(x),
        acts,
        grad_logits,
        mask,
        weight_decay,
    ))
}

pub(crate) fn backward_propagated(
    model: &GcnModel,
    adj: &NormAdj,
    ax: &Array2<f64>,
    acts: &GcnActivations,
    grad_logits: &Array2<f64>,
    mask: Option<&DropoutMask>,
    weight_decay: f64,
) -> GcnGradients {
    // logits = (Â H1d) W1
    let ah = adj.matmul(&apply_mask(&acts.h1, mask));
    let mut gw1 = ah.t().dot(grad_logits);
    // Â is symmetric, so Âᵀ G = Â G
    let mut g_h = adj.matmul(&grad_logits.dot(&model.w1.t()));
    if let Some(DropoutMask(m)) = mask {
        g_h *= m;
    }
    Zip::from(&mut g_h).and(&acts.h1).for_each(|g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    let mut gw0 = ax.t().dot(&g_h);
    if weight_decay != 0.0 {
        gw0.scaled_add(weight_decay, &model.w0);
        gw1.scaled_add(weight_decay, &model.w1);
    }
    GcnGradients { w0: gw0, w1: gw1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::{weighted_ce_loss, LabeledTrainingSet};
    use crate::graph::{build_normalized_adjacency, TagGraph};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        n: usize,
        d: usize,
        seed: u64,
    ) -> (NormAdj, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<_> = (0..2 * n)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .collect();
        let mut x = Array2::zeros((n, d));
        x.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let g = TagGraph::new(n, edges, x.clone(), vec![0; n], 1, None).unwrap();
        (build_normalized_adjacency(&g), x)
    }

    /// Dense re-implementation with explicit loops.
    fn dense_forward(adj: &Array2<f64>, x: &Array2<f64>, m: &GcnModel) -> (Array2<f64>, Array2<f64>) {
        let n = x.nrows();
        let mut ax = Array2::<f64>::zeros((n, x.ncols()));
        for i in 0..n {
            for k in 0..n {
                for c in 0..x.ncols() {
                    ax[[i, c]] += adj[[i, k]] * x[[k, c]];
                }
            }
        }
        let mut h1 = Array2::<f64>::zeros((n, m.hidden_dim()));
        for i in 0..n {
            for h in 0..m.hidden_dim() {
                let mut s = 0.0;
                for c in 0..x.ncols() {
                    s += ax[[i, c]] * m.w0[[c, h]];
                }
                h1[[i, h]] = s.max(0.0);
            }
        }
        let mut ah = Array2::<f64>::zeros(h1.dim());
        for i in 0..n {
            for k in 0..n {
                for h in 0..m.hidden_dim() {
                    ah[[i, h]] += adj[[i, k]] * h1[[k, h]];
                }
            }
        }
        let mut logits = Array2::<f64>::zeros((n, m.out_dim()));
        for i in 0..n {
            for o in 0..m.out_dim() {
                for h in 0..m.hidden_dim() {
                    logits[[i, o]] += ah[[i, h]] * m.w1[[h, o]];
                }
            }
        }
        (h1, logits)
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let (adj, x) = random_instance(6, 3, 1);
        let acts = forward(&GcnModel::zeros(3, 4, 2), &adj, &x, None).unwrap();
        assert!(acts.h1.iter().all(|&v| v == 0.0));
        assert!(acts.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_node_reduces_to_mlp() {
        let g = TagGraph::new(1, [], array![[1.0, -2.0]], vec![0], 1, None).unwrap();
        let adj = build_normalized_adjacency(&g);
        let model = GcnModel {
            w0: array![[1.0, 0.5], [0.25, 1.0]],
            w1: array![[2.0], [3.0]],
        };
        let acts = forward(&model, &adj, g.features(), None).unwrap();
        // x W0 = [0.5, -1.5] -> ReLU [0.5, 0] -> 0.5 * 2
        assert_eq!(acts.h1, array![[0.5, 0.0]]);
        assert_eq!(acts.logits, array![[1.0]]);
    }

    #[test]
    fn matches_dense_oracle() {
        for seed in 0..10 {
            let (adj, x) = random_instance(10, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let model = GcnModel::glorot(4, 5, 3, &mut rng);
            let acts = forward(&model, &adj, &x, None).unwrap();
            let (h1, logits) = dense_forward(&adj.to_dense(), &x, &model);
            for (a, b) in acts.h1.iter().zip(&h1) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in acts.logits.iter().zip(&logits) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (adj, x) = random_instance(5, 3, 2);
        let err = forward(&GcnModel::zeros(4, 2, 2), &adj, &x, None).unwrap_err();
        assert!(matches!(err, TrainError::ShapeMismatch(_)));
    }

    #[test]
    fn zero_upstream_gradient_leaves_weight_decay() {
        let (adj, x) = random_instance(7, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = GcnModel::glorot(3, 4, 2, &mut rng);
        let acts = forward(&model, &adj, &x, None).unwrap();
        let g = backward(&model, &adj, &x, &acts, &Array2::zeros((7, 2)), None, 5e-4).unwrap();
        assert_eq!(g.w0, &model.w0 * 5e-4);
        assert_eq!(g.w1, &model.w1 * 5e-4);
    }

    #[test]
    fn zero_second_layer_blocks_first_layer_gradient() {
        let (adj, x) = random_instance(8, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = GcnModel::glorot(3, 4, 2, &mut rng);
        model.w1.fill(0.0);
        let acts = forward(&model, &adj, &x, None).unwrap();
        let set = LabeledTrainingSet::oracle(vec![0, 3, 5], vec![1, 0, 1]).unwrap();
        let (_, grad) = weighted_ce_loss(&acts.logits, &set, &[1.0, 1.0]).unwrap();
        let g = backward(&model, &adj, &x, &acts, &grad, None, 0.0).unwrap();
        assert!(g.w0.iter().all(|&v| v == 0.0));
        assert!(g.w1.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn dropout_expectation_matches_eval_mode() {
        let (adj, x) = random_instance(6, 3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = GcnModel::glorot(3, 4, 2, &mut rng);
        let eval = forward(&model, &adj, &x, None).unwrap();
        let draws = 20_000;
        let mut mean = Array2::<f64>::zeros(eval.h1.dim());
        for _ in 0..draws {
            let mask = DropoutMask::sample(6, 4, 0.5, &mut rng);
            mean += &(&eval.h1 * &mask.0);
        }
        mean /= draws as f64;
        let total_eval: f64 = eval.h1.sum();
        let total_mean: f64 = mean.sum();
        assert!(total_eval > 0.0);
        assert!(((total_mean - total_eval) / total_eval).abs() < 0.02);
    }
}
