use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SelectError;
use crate::annotator::AnnotationSet;
use crate::gcn::{train, GcnActivations, GcnModel, LabeledTrainingSet, Provenance, TrainConfig, TrainLog};
use crate::graph::{ClassSpace, NormAdj, TagGraph};
use crate::ood::argmax;

/// Unknown-class loss weights tried when training the filter.
pub const UNKNOWN_WEIGHT_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.5];

/// Candidates kept by the filter and the ones it excluded, both ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateIdSet {
    pub node_ids: Vec<usize>,
    pub excluded: Vec<usize>,
}

/// Keeps a candidate iff the argmax of its K+1 logits is an ID class. Ties
/// go to the lowest index, so an ID class tied with unknown keeps the node.
pub fn filter_candidates(logits: &Array2<f64>, candidates: &[usize], k: usize) -> CandidateIdSet {
    let (mut node_ids, mut excluded): (Vec<usize>, Vec<usize>) =
        candidates.iter().partition(|&&v| argmax(logits.row(v)) < k);
    node_ids.sort_unstable();
    excluded.sort_unstable();
    CandidateIdSet { node_ids, excluded }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub model: GcnModel,
    pub activations: GcnActivations,
    pub unknown_weight: f64,
    pub val_binary_accuracy: f64,
    /// `(unknown weight, validation binary accuracy)` per grid point.
    pub sweep: Vec<(f64, f64)>,
    pub log: TrainLog,
}

/// Fraction of `val` nodes whose ID/OOD status the K+1 logits get right.
fn binary_accuracy(logits: &Array2<f64>, val: &[usize], graph: &TagGraph, classes: &ClassSpace) -> f64 {
    if val.is_empty() {
        return 0.0;
    }
    let k = classes.k();
    let correct = val
        .iter()
        .filter(|&&v| (argmax(logits.row(v)) < k) == classes.is_id(graph.label(v)))
        .count();
    correct as f64 / val.len() as f64
}

/// Trains one K+1 filter per unknown-class weight and keeps the one with
/// the best validation ID-vs-OOD accuracy (earliest grid point on ties).
/// `config.class_weights` is overridden per grid point.
#[allow(clippy::too_many_arguments)]
pub fn train_filter(
    graph: &TagGraph,
    adj: &NormAdj,
    classes: &ClassSpace,
    annotations: &AnnotationSet,
    val: &[usize],
    unknown_weights: &[f64],
    config: &TrainConfig,
) -> Result<FilterOutcome, SelectError> {
    if annotations.is_empty() {
        return Err(SelectError::EmptyAnnotations);
    }
    if unknown_weights.is_empty() {
        return Err(SelectError::EmptyWeightGrid);
    }
    let k = classes.k();
    let (nodes, labels): (Vec<usize>, Vec<usize>) = annotations.labels().unzip();
    let prov = vec![Provenance::Llm; nodes.len()];
    let train_set = LabeledTrainingSet::new(nodes, labels, prov)?;
    let val_eval = |acts: &GcnActivations| binary_accuracy(&acts.logits, val, graph, classes);

    let runs: Vec<_> = unknown_weights
        .par_iter()
        .map(|&w| {
            let mut cfg = config.clone();
            cfg.class_weights = vec![1.0; k];
            cfg.class_weights.push(w);
            train(graph.features(), adj, k + 1, &train_set, &val_eval, &cfg).map(|out| {
                let acc = val_eval(&out.activations);
                (w, acc, out)
            })
        })
        .collect::<Result<_, _>>()?;

    let sweep = runs.iter().map(|(w, acc, _)| (*w, *acc)).collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.1 > runs[best].1 {
            best = i;
        }
    }
    let (unknown_weight, val_binary_accuracy, out) = runs.into_iter().nth(best).expect("non-empty grid");
    Ok(FilterOutcome {
        model: out.model,
        activations: out.activations,
        unknown_weight,
        val_binary_accuracy,
        sweep,
        log: out.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{annotate, AnnotationCache, AnnotatorSpec, PromptKind, PromptTemplate};
    use crate::gcn::ModelSelection;
    use crate::graph::{build_normalized_adjacency, make_splits_with, SplitSizes};
    use crate::synth::{sbm_graph, SbmSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unknown_argmax_excludes() {
        let logits = ndarray::array![[0.1, 0.2, 5.0], [5.0, 0.2, 0.1], [1.0, 0.0, 1.0]];
        let set = filter_candidates(&logits, &[0, 1, 2], 2);
        assert_eq!(set.node_ids, vec![1, 2]);
        assert_eq!(set.excluded, vec![0]);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 3;
        let logits = Array2::from_shape_fn((1000, k + 1), |_| (rng.random_range(-3i32..=3)) as f64);
        let candidates: Vec<usize> = (0..1000).filter(|v| v % 3 != 0).collect();
        let set = filter_candidates(&logits, &candidates, k);
        let mut kept = Vec::new();
        for &v in &candidates {
            let mut best = 0;
            for j in 1..=k {
                if logits[[v, j]] > logits[[v, best]] {
                    best = j;
                }
            }
            if best != k {
                kept.push(v);
            }
        }
        assert_eq!(set.node_ids, kept);
        assert_eq!(set.node_ids.len() + set.excluded.len(), candidates.len());
    }

    fn setup() -> (TagGraph, ClassSpace, NormAdj, Vec<usize>, Vec<usize>) {
        let g = sbm_graph(&SbmSpec {
            block_sizes: vec![60, 60, 60],
            p_in: 0.1,
            p_out: 0.005,
            feature_dim: 4,
            mean_scale: 3.0,
            noise_std: 1.0,
            seed: 8,
            zero_mean_blocks: vec![],
        });
        let cs = ClassSpace::anonymous(3, vec![0, 1]).unwrap();
        let adj = build_normalized_adjacency(&g);
        let s = make_splits_with(&g, &cs, 1, SplitSizes { val_multiple: 5, test_id: 20, test_ood: 20 }).unwrap();
        (g, cs, adj, s.val, s.candidate)
    }

    #[test]
    fn oracle_annotations_give_an_accurate_filter() {
        let (g, cs, adj, val, cand) = setup();
        let nodes: Vec<usize> = cand.iter().copied().step_by(2).collect();
        let ann = annotate(&nodes, &g, &cs, &AnnotatorSpec::OracleGroundTruth, &PromptTemplate::new(PromptKind::Short, "paper"), &AnnotationCache::in_memory()).unwrap();
        let cfg = TrainConfig { epochs: 100, ..TrainConfig::default() };
        let out = train_filter(&g, &adj, &cs, &ann, &val, &UNKNOWN_WEIGHT_GRID, &cfg).unwrap();
        assert!(out.val_binary_accuracy >= 0.95, "{}", out.val_binary_accuracy);
        assert_eq!(out.sweep.len(), 5);
        let again = train_filter(&g, &adj, &cs, &ann, &val, &UNKNOWN_WEIGHT_GRID, &cfg).unwrap();
        assert_eq!(again.unknown_weight, out.unknown_weight);
        assert_eq!(again.model, out.model);
    }

    #[test]
    fn all_unknown_annotations_filter_everything() {
        let (g, cs, adj, val, cand) = setup();
        let nodes: Vec<usize> = cand.iter().copied().filter(|&v| !cs.is_id(g.label(v))).take(20).collect();
        let ann = annotate(&nodes, &g, &cs, &AnnotatorSpec::OracleGroundTruth, &PromptTemplate::new(PromptKind::Short, "paper"), &AnnotationCache::in_memory()).unwrap();
        let cfg = TrainConfig {
            model_selection: ModelSelection::LastEpoch,
            ..TrainConfig::default()
        };
        let out = train_filter(&g, &adj, &cs, &ann, &val, &[0.5], &cfg).unwrap();
        let kept = filter_candidates(&out.activations.logits, &cand, cs.k());
        assert!(kept.node_ids.is_empty(), "{} kept", kept.node_ids.len());
    }
}
