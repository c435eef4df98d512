use ndarray::{Array1, Array2, ArrayView1};

use super::{LabeledTrainingSet, TrainError};

/// Numerically stable softmax of one logit row.
pub fn softmax_row(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = row.mapv(|v| (v - max).exp());
    let s = e.sum();
    e /= s;
    e
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for (mut o, row) in out.outer_iter_mut().zip(logits.outer_iter()) {
        o.assign(&softmax_row(row));
    }
    out
}

/// Class-weighted masked cross-entropy:
/// `-(1/|T|) Σ_{i∈T} w[y_i] · log softmax(logits_i)[y_i]`.
///
/// Returns the loss and its gradient with respect to `logits`; rows outside
/// the training set have zero gradient.
pub fn weighted_ce_loss(
    logits: &Array2<f64>,
    train: &LabeledTrainingSet,
    weights: &[f64],
) -> Result<(f64, Array2<f64>), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if weights.len() != logits.ncols() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} class weights for {} outputs",
            weights.len(),
            logits.ncols()
        )));
    }
    let scale = 1.0 / train.len() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (&node, &label) in train.node_ids.iter().zip(&train.labels) {
        if node >= logits.nrows() || label >= logits.ncols() {
            return Err(TrainError::ShapeMismatch(format!(
                "training pair ({node}, {label}) outside logits {:?}",
                logits.dim()
            )));
        }
        let row = logits.row(node);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let w = weights[label];
        loss -= w * (row[label] - lse);
        let mut g = grad.row_mut(node);
        for (k, gk) in g.iter_mut().enumerate() {
            let p = (row[k] - lse).exp();
            *gk = w * scale * (p - if k == label { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(label: usize) -> LabeledTrainingSet {
        LabeledTrainingSet::oracle(vec![0], vec![label]).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let (loss, _) = weighted_ce_loss(&array![[0.0, 0.0]], &one(0), &[1.0, 1.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn weights_scale_linearly() {
        let (loss, _) = weighted_ce_loss(&array![[0.0, 0.0]], &one(0), &[0.5, 1.0]).unwrap();
        assert!((loss - 0.5 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_set_is_rejected() {
        let empty = LabeledTrainingSet::oracle(vec![], vec![]).unwrap();
        assert_eq!(
            weighted_ce_loss(&array![[0.0, 0.0]], &empty, &[1.0, 1.0]).unwrap_err(),
            TrainError::EmptyTrainingSet
        );
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let (n, c) = (20, 4);
            let mut logits = Array2::zeros((n, c));
            logits.iter_mut().for_each(|v| *v = rng.random_range(-5.0..5.0));
            let nodes: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
            if nodes.is_empty() {
                continue;
            }
            let labels: Vec<usize> = nodes.iter().map(|_| rng.random_range(0..c)).collect();
            let weights: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
            let set = LabeledTrainingSet::oracle(nodes.clone(), labels.clone()).unwrap();

            let mut expected = 0.0;
            let mut expected_unweighted = 0.0;
            for (&i, &y) in nodes.iter().zip(&labels) {
                let z: f64 = (0..c).map(|k| f64::exp(logits[[i, k]])).sum();
                let logp = (f64::exp(logits[[i, y]]) / z).ln();
                expected -= weights[y] * logp;
                expected_unweighted -= logp;
            }
            expected /= nodes.len() as f64;
            expected_unweighted /= nodes.len() as f64;

            let (loss, grad) = weighted_ce_loss(&logits, &set, &weights).unwrap();
            assert!((loss - expected).abs() < 1e-12);
            let (loss1, _) = weighted_ce_loss(&logits, &set, &[1.0; 4]).unwrap();
            assert!((loss1 - expected_unweighted).abs() < 1e-12);
            for i in (0..n).filter(|i| !nodes.contains(i)) {
                assert!(grad.row(i).iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut logits = Array2::zeros((50, 5));
        logits.iter_mut().for_each(|v| *v = rng.random_range(-300.0..300.0));
        for row in softmax_rows(&logits).outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
