use std::collections::HashSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward_propagated, forward_propagated};
use super::{
    adam_step, weighted_ce_loss, AdamState, DropoutMask, GcnActivations, GcnModel, TrainError,
};
use crate::graph::NormAdj;

/// Where a training label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Oracle,
    Llm,
}

/// Supervised nodes with labels in the model's output alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTrainingSet {
    pub node_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl LabeledTrainingSet {
    pub fn new(
        node_ids: Vec<usize>,
        labels: Vec<usize>,
        provenance: Vec<Provenance>,
    ) -> Result<Self, TrainError> {
        if node_ids.len() != labels.len() || node_ids.len() != provenance.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} nodes, {} labels, {} provenance entries",
                node_ids.len(),
                labels.len(),
                provenance.len()
            )));
        }
        let mut seen = HashSet::with_capacity(node_ids.len());
        for &v in &node_ids {
            if !seen.insert(v) {
                return Err(TrainError::DuplicateNode(v));
            }
        }
        Ok(Self {
            node_ids,
            labels,
            provenance,
        })
    }

    /// All labels marked as oracle-provided.
    pub fn oracle(node_ids: Vec<usize>, labels: Vec<usize>) -> Result<Self, TrainError> {
        let prov = vec![Provenance::Oracle; node_ids.len()];
        Self::new(node_ids, labels, prov)
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    fn check_labels(&self, out_dim: usize) -> Result<(), TrainError> {
        for (&node, &label) in self.node_ids.iter().zip(&self.labels) {
            if label >= out_dim {
                return Err(TrainError::LabelOutOfRange {
                    node,
                    label,
                    out_dim,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    BestVal,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    /// Per-output loss weights; empty means all ones.
    pub class_weights: Vec<f64>,
    pub seed: u64,
    pub model_selection: ModelSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            epochs: 200,
            class_weights: Vec::new(),
            seed: 0,
            model_selection: ModelSelection::BestVal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, out_dim: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if out_dim < 2 {
            return bad(format!("out_dim must be at least 2, got {out_dim}"));
        }
        if !self.class_weights.is_empty() {
            if self.class_weights.len() != out_dim {
                return bad(format!(
                    "{} class weights for {} outputs",
                    self.class_weights.len(),
                    out_dim
                ));
            }
            if self.class_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
                return bad("class weights must be positive".into());
            }
        }
        Ok(())
    }

    fn weights(&self, out_dim: usize) -> Vec<f64> {
        if self.class_weights.is_empty() {
            vec![1.0; out_dim]
        } else {
            self.class_weights.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GcnModel,
    /// Evaluation-mode activations of the returned model on the full graph.
    pub activations: GcnActivations,
    pub log: TrainLog,
}

/// Full-batch training. After every epoch `val_eval` scores the
/// evaluation-mode activations; with [`ModelSelection::BestVal`] the earliest
/// epoch with the highest score is returned.
///
/// Weight init uses a ChaCha8 stream 0 seeded with `config.seed`; dropout
/// masks use stream 1 of the same seed.
pub fn train(
    x: &Array2<f64>,
    adj: &NormAdj,
    out_dim: usize,
    train_set: &LabeledTrainingSet,
    val_eval: &dyn Fn(&GcnActivations) -> f64,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate(out_dim)?;
    if x.nrows() != adj.num_nodes() {
        return Err(TrainError::ShapeMismatch(format!(
            "features have {} rows, adjacency has {} nodes",
            x.nrows(),
            adj.num_nodes()
        )));
    }
    train_set.check_labels(out_dim)?;
    if let Some(&v) = train_set.node_ids.iter().find(|&&v| v >= x.nrows()) {
        return Err(TrainError::ShapeMismatch(format!("training node {v} out of range")));
    }

    let weights = config.weights(out_dim);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed);
    drop_rng.set_stream(1);

    let ax = adj.matmul(x);
    let mut model = GcnModel::glorot(x.ncols(), config.hidden_dim, out_dim, &mut init_rng);
    let mut adam = AdamState::new(&model);
    let mut log = TrainLog::default();

    if config.epochs == 0 {
        let activations = forward_propagated(&model, adj, &ax, None);
        return Ok(TrainOutcome {
            model,
            activations,
            log,
        });
    }
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }

    let mut best: Option<(f64, GcnModel, GcnActivations)> = None;
    let mut last_acts = None;
    for epoch in 0..config.epochs {
        let mask = (config.dropout > 0.0).then(|| {
            DropoutMask::sample(x.nrows(), config.hidden_dim, config.dropout, &mut drop_rng)
        });
        let acts = forward_propagated(&model, adj, &ax, mask.as_ref());
        let (loss, grad_logits) = weighted_ce_loss(&acts.logits, train_set, &weights)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss(epoch));
        }
        let grads = backward_propagated(
            &model,
            adj,
            &ax,
            &acts,
            &grad_logits,
            mask.as_ref(),
            config.weight_decay,
        );
        adam_step(&mut model, &grads, &mut adam, config.learning_rate);
        if !model.is_finite() {
            return Err(TrainError::NonFiniteLoss(epoch));
        }

        let eval_acts = forward_propagated(&model, adj, &ax, None);
        let val_score = val_eval(&eval_acts);
        log.epochs.push(EpochRecord {
            epoch,
            loss,
            val_score,
        });
        match config.model_selection {
            ModelSelection::BestVal => {
                if best.as_ref().is_none_or(|(s, _, _)| val_score > *s) {
                    log.selected_epoch = Some(epoch);
                    best = Some((val_score, model.clone(), eval_acts));
                }
            }
            ModelSelection::LastEpoch => {
                log.selected_epoch = Some(epoch);
                last_acts = Some(eval_acts);
            }
        }
    }

    let (model, activations) = match best {
        Some((_, m, a)) => (m, a),
        None => (model, last_acts.expect("at least one epoch ran")),
    };
    Ok(TrainOutcome {
        model,
        activations,
        log,
    })
}
