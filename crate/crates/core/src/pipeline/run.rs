use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::{AnnotatorKind, ConfigError, ExperimentConfig, Mode};
use crate::annotator::{annotate, AnnotateError, AnnotationCache, AnnotationSet, AnnotatorSpec};
use crate::bundle::{read_bundle, BundleError};
use crate::gcn::{softmax_rows, Provenance, train, GcnActivations, LabeledTrainingSet, TrainConfig, TrainError, TrainOutcome};
use crate::graph::{
    build_normalized_adjacency, make_splits_with, ClassSpace, GraphError, NormAdj, SplitAssignment, TagGraph,
};
use crate::metrics::{aggregate, evaluate, AggregateReport, EvalReport, MetricError};
use crate::ood::{argmax, score, Detector, OodScores};
use crate::select::{
    featprop_embeddings, filter_candidates, merge_labels, CandidateIdSet, FilterOutcome, MergedLabels, oracle_label, select_kmedoids, select_random,
    select_uncertainty, train_filter, BudgetKind, BudgetLedger, Embedding, MergeMode, OracleLabels, SelectError,
    SelectionRecord, SelectionResult, SelectionStrategy,
};
use crate::synth::sbm_graph;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{stage}: node {node} belongs to the validation or test set")]
    Leakage { stage: String, node: usize },
    #[error("budget ledger inconsistent: {0}")]
    BudgetViolation(String),
    #[error("{0}")]
    Insufficient(String),
    #[error("{0}")]
    Io(String),
}

/// Graph, class partition and normalized adjacency shared by all seeds.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: TagGraph,
    pub classes: ClassSpace,
    pub adj: NormAdj,
    /// SHA-256 of each input file (or of the synthetic spec).
    pub input_hashes: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, graph: TagGraph, classes: ClassSpace) -> Self {
        let adj = build_normalized_adjacency(&graph);
        Self {
            name: name.into(),
            graph,
            classes,
            adj,
            input_hashes: BTreeMap::new(),
        }
    }

    /// Loads the bundle named by `dataset`, or generates the `[synthetic]` graph.
    /// Relative bundle paths resolve against `base_dir`.
    pub fn load(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Self, PipelineError> {
        if let Some(s) = &cfg.synthetic {
            let graph = sbm_graph(&s.graph);
            let classes = ClassSpace::anonymous(s.graph.block_sizes.len(), s.id_classes.clone())?;
            let mut d = Self::new("synthetic", graph, classes);
            let spec = serde_json::to_vec(s).expect("spec serializes");
            d.input_hashes.insert("synthetic".into(), hex::encode(Sha256::digest(&spec)));
            return Ok(d);
        }
        let dir = base_dir.join(cfg.dataset.as_ref().ok_or_else(|| ConfigError::new(".", "no dataset given"))?);
        let bundle = read_bundle(&dir)?;
        let mut d = Self::new(bundle.meta.dataset.clone(), bundle.graph, bundle.classes);
        for name in ["meta.json", "edges.tsv", "features.bin", "labels.tsv", "texts.jsonl"] {
            let p = dir.join(name);
            if p.exists() {
                let bytes = std::fs::read(&p).map_err(|e| PipelineError::Io(format!("{}: {e}", p.display())))?;
                d.input_hashes.insert(name.into(), hex::encode(Sha256::digest(&bytes)));
            }
        }
        Ok(d)
    }

    /// Dense ID label per node, `K` for OOD nodes.
    pub fn open_labels(&self) -> Vec<usize> {
        self.graph.labels().iter().map(|&c| self.classes.open_label(c)).collect()
    }
}

/// Independent RNG seeds for the stages of one run.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Annotate = 1,
    Mock = 2,
    Filter = 3,
    Select = 4,
    Classifier = 5,
    Initial = 6,
    Rounds = 7,
    StudyOrder = 8,
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub unknown_weight: f64,
    pub val_binary_accuracy: f64,
    pub sweep: Vec<(f64, f64)>,
    pub kept: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub oracle_labels: usize,
    pub llm_labels: usize,
    pub conflict_count: usize,
    pub selected_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub splits: SplitAssignment,
    pub llm_labels: Option<AnnotationSet>,
    pub filter: Option<FilterSummary>,
    pub selection: SelectionRecord,
    pub training: TrainingSummary,
    pub ledger: BudgetLedger,
    pub scores: OodScores,
    pub predictions: Vec<usize>,
    pub report: EvalReport,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub dataset: String,
    pub runs: Vec<SeedRun>,
    pub failures: Vec<SeedFailure>,
    pub aggregate: Option<AggregateReport>,
}

struct Timer {
    start: Instant,
    timings: Vec<StageTiming>,
}

impl Timer {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            timings: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.start).as_secs_f64(),
        });
        self.start = now;
    }
}

/// Fails if any node is a validation or test node.
pub fn guard_leakage(nodes: &[usize], splits: &SplitAssignment, stage: &str) -> Result<(), PipelineError> {
    let held_out = |v: usize| splits.val.binary_search(&v).is_ok() || splits.test.binary_search(&v).is_ok();
    match nodes.iter().find(|&&v| held_out(v)) {
        Some(&node) => Err(PipelineError::Leakage {
            stage: stage.into(),
            node,
        }),
        None => Ok(()),
    }
}

fn guard_ledger(ledger: &BudgetLedger) -> Result<(), PipelineError> {
    if ledger.is_consistent() {
        Ok(())
    } else {
        Err(PipelineError::BudgetViolation(format!("{ledger:?}")))
    }
}

/// Builds the annotator for one seed.
pub fn annotator_spec(cfg: &ExperimentConfig, classes: &ClassSpace, seed: u64) -> Result<AnnotatorSpec, ConfigError> {
    let a = &cfg.annotator;
    Ok(match a.kind {
        AnnotatorKind::Oracle => AnnotatorSpec::OracleGroundTruth,
        AnnotatorKind::Mock => AnnotatorSpec::MockConfusion {
            matrix: a.mock_confusion(classes)?,
            seed: stage_seed(seed, Stage::Mock),
        },
        AnnotatorKind::Remote => AnnotatorSpec::RemoteChat {
            endpoint: a.endpoint.clone(),
            model_name: a.model_name.clone(),
            max_in_flight: a.max_in_flight,
            retry: a.retry,
            timeout_secs: a.timeout_secs,
        },
    })
}

/// Whether `mode` runs the LLM annotation and filtering stages.
pub fn uses_llm(mode: Mode) -> bool {
    matches!(mode, Mode::LlmGood | Mode::LlmGoodF | Mode::LlmGoodCombined)
}

fn require_llm_mode(mode: Mode) -> Result<(), PipelineError> {
    if uses_llm(mode) {
        Ok(())
    } else {
        Err(PipelineError::Insufficient(format!(
            "mode {mode} has no LLM stages; use the full run"
        )))
    }
}

/// Fresh ledger for one seed: `B` human units and the mode's LLM allowance.
pub fn initial_ledger(cfg: &ExperimentConfig, data: &Dataset, splits: &SplitAssignment) -> BudgetLedger {
    let budget = cfg.human_budget.resolve(data.classes.k());
    let llm = match cfg.mode {
        Mode::LlmGood | Mode::LlmGoodCombined => cfg.llm_budget,
        Mode::LlmGoodF => splits.candidate.len(),
        _ => 0,
    };
    BudgetLedger::new(budget, llm)
}

/// Candidates sent to the annotator: `m` random ones, or every candidate in
/// shuffled order for the full-filter mode.
pub fn annotation_nodes(cfg: &ExperimentConfig, splits: &SplitAssignment, seed: u64) -> Vec<usize> {
    let n = if cfg.mode == Mode::LlmGoodF {
        splits.candidate.len()
    } else {
        cfg.llm_budget
    };
    select_random(&splits.candidate, n, stage_seed(seed, Stage::Annotate)).selected
}

/// LLM-annotates `nodes`, charging the LLM budget.
#[allow(clippy::too_many_arguments)]
pub fn annotate_nodes(
    cfg: &ExperimentConfig,
    data: &Dataset,
    splits: &SplitAssignment,
    nodes: &[usize],
    ledger: &mut BudgetLedger,
    cache: &AnnotationCache,
    seed: u64,
) -> Result<AnnotationSet, PipelineError> {
    guard_leakage(nodes, splits, "annotate")?;
    ledger.consume(BudgetKind::Llm, "annotate", nodes.len())?;
    let spec = annotator_spec(cfg, &data.classes, seed)?;
    Ok(annotate(nodes, &data.graph, &data.classes, &spec, &cfg.annotator.template(), cache)?)
}

/// Filter stage output. `model` is `None` for the full-filter mode, which
/// keeps exactly the candidates the annotator called ID.
#[derive(Debug, Clone)]
pub struct FilterStage {
    pub model: Option<FilterOutcome>,
    pub kept: CandidateIdSet,
    pub summary: FilterSummary,
}

pub fn filter_stage(
    cfg: &ExperimentConfig,
    data: &Dataset,
    splits: &SplitAssignment,
    ann: &AnnotationSet,
    seed: u64,
) -> Result<FilterStage, PipelineError> {
    require_llm_mode(cfg.mode)?;
    if cfg.mode == Mode::LlmGoodF {
        let (node_ids, excluded): (Vec<usize>, Vec<usize>) = splits
            .candidate
            .iter()
            .partition(|&&v| ann.label(v).is_some_and(|c| c < data.classes.k()));
        let summary = FilterSummary {
            unknown_weight: 0.0,
            val_binary_accuracy: 0.0,
            sweep: Vec::new(),
            kept: node_ids.len(),
            excluded: excluded.len(),
        };
        return Ok(FilterStage {
            model: None,
            kept: CandidateIdSet { node_ids, excluded },
            summary,
        });
    }
    let fcfg = with_seed(&cfg.filter.train, stage_seed(seed, Stage::Filter));
    let out = train_filter(
        &data.graph,
        &data.adj,
        &data.classes,
        ann,
        &splits.val,
        &cfg.filter.unknown_weights,
        &fcfg,
    )?;
    let kept = filter_candidates(&out.activations.logits, &splits.candidate, data.classes.k());
    let summary = FilterSummary {
        unknown_weight: out.unknown_weight,
        val_binary_accuracy: out.val_binary_accuracy,
        sweep: out.sweep.clone(),
        kept: kept.node_ids.len(),
        excluded: kept.excluded.len(),
    };
    Ok(FilterStage {
        model: Some(out),
        kept,
        summary,
    })
}

/// Picks `B` nodes from the kept candidates. `filter` is needed for
/// uncertainty and for k-medoids over hidden embeddings.
pub fn select_stage(
    cfg: &ExperimentConfig,
    data: &Dataset,
    kept: &CandidateIdSet,
    filter: Option<&GcnActivations>,
    seed: u64,
) -> Result<SelectionResult, PipelineError> {
    require_llm_mode(cfg.mode)?;
    let budget = cfg.human_budget.resolve(data.classes.k());
    let sel_seed = stage_seed(seed, Stage::Select);
    let need = || {
        filter.ok_or_else(|| PipelineError::Insufficient("selection strategy needs the filter model".into()))
    };
    Ok(match cfg.selection.strategy {
        SelectionStrategy::Random => select_random(&kept.node_ids, budget, sel_seed),
        SelectionStrategy::Uncertainty => {
            let probs = softmax_rows(&need()?.logits);
            select_uncertainty(&probs, &kept.node_ids, budget)
        }
        SelectionStrategy::Kmedoids => {
            let featprop;
            let emb = match cfg.selection.embedding {
                Embedding::Hidden => &need()?.h1,
                Embedding::Featprop => {
                    featprop = featprop_embeddings(&data.adj, data.graph.features());
                    &featprop
                }
            };
            select_kmedoids(emb, &kept.node_ids, budget, sel_seed, cfg.selection.fixed_clusters)
        }
    })
}

/// Ground-truth labels for `nodes`, charging the human budget.
pub fn human_label(
    data: &Dataset,
    splits: &SplitAssignment,
    nodes: &[usize],
    ledger: &mut BudgetLedger,
    stage: &str,
) -> Result<OracleLabels, PipelineError> {
    guard_leakage(nodes, splits, stage)?;
    Ok(oracle_label(nodes, &data.graph, &data.classes, ledger, stage)?)
}

pub fn merge_mode(mode: Mode) -> MergeMode {
    if mode == Mode::LlmGoodCombined {
        MergeMode::Combined
    } else {
        MergeMode::HumanOnly
    }
}

/// Classifier training config with the per-seed RNG seed filled in.
pub fn classifier_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    with_seed(&cfg.classifier, stage_seed(seed, Stage::Classifier))
}

/// Detector actually used: baselines carry their own.
pub fn effective_detector(cfg: &ExperimentConfig) -> Detector {
    cfg.mode.baseline_detector().unwrap_or(cfg.detector)
}

pub fn training_summary(merged: &MergedLabels, trained: &TrainOutcome) -> TrainingSummary {
    let count = |p: Provenance| merged.set.provenance.iter().filter(|&&q| q == p).count();
    TrainingSummary {
        oracle_labels: count(Provenance::Oracle),
        llm_labels: count(Provenance::Llm),
        conflict_count: merged.conflict_count,
        selected_epoch: trained.log.selected_epoch,
    }
}

/// Trains the K-way classifier, selecting epochs by validation ID accuracy.
pub fn train_classifier(
    data: &Dataset,
    splits: &SplitAssignment,
    set: &LabeledTrainingSet,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let val_id: Vec<(usize, usize)> = splits
        .val
        .iter()
        .filter_map(|&v| data.classes.dense_index(data.graph.label(v)).map(|c| (v, c)))
        .collect();
    let val_eval = |acts: &GcnActivations| {
        if val_id.is_empty() {
            return 0.0;
        }
        let hits = val_id.iter().filter(|&&(v, c)| argmax(acts.logits.row(v)) == c).count();
        hits as f64 / val_id.len() as f64
    };
    train(data.graph.features(), &data.adj, data.classes.k(), set, &val_eval, config)
}

/// ID accuracy and detection metrics of classifier logits on the test set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_logits(
    data: &Dataset,
    splits: &SplitAssignment,
    logits: &Array2<f64>,
    detector: Detector,
    cfg: &ExperimentConfig,
    seed: u64,
    id_proportion: Option<f64>,
    echo: serde_json::Value,
) -> Result<(OodScores, Vec<usize>, EvalReport), PipelineError> {
    let scores = score(detector, logits, &data.adj, cfg.propagation);
    let predictions: Vec<usize> = logits.rows().into_iter().map(argmax).collect();
    let truth = data.open_labels();
    let k = data.classes.k();
    let id_test: Vec<usize> = splits.test.iter().copied().filter(|&v| truth[v] < k).collect();
    let test_scores: Vec<f64> = splits.test.iter().map(|&v| scores.scores[v]).collect();
    let test_is_ood: Vec<bool> = splits.test.iter().map(|&v| truth[v] == k).collect();
    let report = evaluate(
        seed,
        &predictions,
        &truth,
        &id_test,
        &test_scores,
        &test_is_ood,
        id_proportion,
        echo,
    )?;
    Ok((scores, predictions, report))
}

fn with_seed(config: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..config.clone()
    }
}

/// One full pipeline run for a single seed.
pub fn run_seed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    cache: &AnnotationCache,
) -> Result<SeedRun, PipelineError> {
    let mut timer = Timer::new();
    let splits = make_splits_with(&data.graph, &data.classes, seed, cfg.splits)?;
    splits.validate(data.graph.num_nodes())?;
    let budget = cfg.human_budget.resolve(data.classes.k());
    let mut ledger = initial_ledger(cfg, data, &splits);
    timer.lap("splits");

    let mut llm_labels = None;
    let mut filter = None;
    let (selection, oracle) = if uses_llm(cfg.mode) {
        let nodes = annotation_nodes(cfg, &splits, seed);
        let ann = annotate_nodes(cfg, data, &splits, &nodes, &mut ledger, cache, seed)?;
        timer.lap("annotate");
        let f = filter_stage(cfg, data, &splits, &ann, seed)?;
        timer.lap("filter");
        let selection = select_stage(cfg, data, &f.kept, f.model.as_ref().map(|m| &m.activations), seed)?;
        let oracle = human_label(data, &splits, &selection.selected, &mut ledger, "select")?;
        timer.lap("select");
        llm_labels = Some(ann);
        filter = Some(f.summary);
        (selection, oracle)
    } else {
        let out = run_baseline_selection(cfg, data, &splits, &mut ledger, seed)?;
        timer.lap("select");
        out
    };
    let id_proportion = oracle_for_record(&selection, data).id_proportion;

    let merged = merge_labels(&oracle, llm_labels.as_ref(), merge_mode(cfg.mode));
    let trained = train_classifier(data, &splits, &merged.set, &classifier_config(cfg, seed))?;
    timer.lap("classifier");

    let training = training_summary(&merged, &trained);
    let detector = effective_detector(cfg);
    let echo = json!({
        "mode": cfg.mode.as_str(),
        "dataset": data.name,
        "detector": detector.as_str(),
        "human_budget": budget,
        "human_used": ledger.human_used,
        "llm_used": ledger.llm_used,
        "filter": filter,
        "training": training,
    });
    let (scores, predictions, report) =
        evaluate_logits(data, &splits, &trained.activations.logits, detector, cfg, seed, id_proportion, echo)?;
    timer.lap("evaluate");

    if let Some(ann) = &llm_labels {
        let nodes: Vec<usize> = ann.entries.keys().copied().collect();
        guard_leakage(&nodes, &splits, "annotate")?;
    }
    guard_leakage(&selection.selected, &splits, "select")?;
    guard_ledger(&ledger)?;

    let record = SelectionRecord::new(&selection, &oracle_for_record(&selection, data));
    Ok(SeedRun {
        seed,
        splits,
        llm_labels,
        filter,
        selection: record,
        training,
        ledger,
        scores,
        predictions,
        report,
        timings: timer.timings,
    })
}

/// Oracle outcome of exactly the recorded selection (baselines also label
/// an initial pool that is not part of the record).
fn oracle_for_record(selection: &SelectionResult, data: &Dataset) -> OracleLabels {
    let mut labeled = Vec::new();
    let mut revealed_ood = Vec::new();
    for &v in &selection.selected {
        match data.classes.dense_index(data.graph.label(v)) {
            Some(c) => labeled.push((v, c)),
            None => revealed_ood.push(v),
        }
    }
    let id_proportion =
        (!selection.selected.is_empty()).then(|| labeled.len() as f64 / selection.selected.len() as f64);
    OracleLabels {
        labeled,
        revealed_ood,
        id_proportion,
    }
}

/// Initial ID-labeled pool, then rounds of K picks by the mode's rule until
/// the human budget is spent. Returns the round picks as one selection and
/// the oracle labels of every labeled node.
fn run_baseline_selection(
    cfg: &ExperimentConfig,
    data: &Dataset,
    splits: &SplitAssignment,
    ledger: &mut BudgetLedger,
    seed: u64,
) -> Result<(SelectionResult, OracleLabels), PipelineError> {
    let k = data.classes.k();
    let budget = ledger.human_total;
    let initial_n = if budget >= 10 * k { 5 * k } else { k.min(budget) };
    let id_candidates: Vec<usize> = splits
        .candidate
        .iter()
        .copied()
        .filter(|&v| data.classes.is_id(data.graph.label(v)))
        .collect();
    let initial = select_random(&id_candidates, initial_n, stage_seed(seed, Stage::Initial)).selected;
    let mut labels = human_label(data, splits, &initial, ledger, "initial")?;

    let (strategy, rule_seed) = match cfg.mode {
        Mode::BaselineUncertainty => (SelectionStrategy::Uncertainty, 0),
        Mode::BaselineFeatprop => (SelectionStrategy::Kmedoids, stage_seed(seed, Stage::Rounds)),
        _ => (SelectionStrategy::Random, stage_seed(seed, Stage::Rounds)),
    };
    let featprop = (cfg.mode == Mode::BaselineFeatprop).then(|| featprop_embeddings(&data.adj, data.graph.features()));
    let mut taken = vec![false; data.graph.num_nodes()];
    for &v in &initial {
        taken[v] = true;
    }
    let mut round_picks = Vec::new();
    let mut round = 0u64;
    while ledger.remaining(BudgetKind::Human) > 0 {
        let r = k.min(ledger.remaining(BudgetKind::Human));
        let pool: Vec<usize> = splits.candidate.iter().copied().filter(|&v| !taken[v]).collect();
        if pool.is_empty() {
            warn!("seed {seed}: candidate pool exhausted with budget left");
            break;
        }
        let round_seed = rule_seed.wrapping_add(round);
        let picks = match cfg.mode {
            Mode::BaselineUncertainty => {
                let ccfg = with_seed(&cfg.classifier, stage_seed(seed, Stage::Classifier).wrapping_add(round));
                let set = merge_labels(&labels, None, MergeMode::HumanOnly).set;
                let trained = train_classifier(data, splits, &set, &ccfg)?;
                let probs = softmax_rows(&trained.activations.logits);
                select_uncertainty(&probs, &pool, r).selected
            }
            Mode::BaselineFeatprop => {
                let emb = featprop.as_ref().expect("computed for featprop");
                select_kmedoids(emb, &pool, r, round_seed, None).selected
            }
            _ => select_random(&pool, r, round_seed).selected,
        };
        let out = human_label(data, splits, &picks, ledger, &format!("round {round}"))?;
        labels.labeled.extend(out.labeled);
        labels.revealed_ood.extend(out.revealed_ood);
        for &v in &picks {
            taken[v] = true;
        }
        round_picks.extend(picks);
        round += 1;
    }
    labels.id_proportion = None;
    Ok((
        SelectionResult {
            selected: round_picks,
            strategy,
            budget,
            seed: rule_seed,
        },
        labels,
    ))
}

/// Runs every configured seed (in parallel) and aggregates the successful ones.
pub fn run_pipeline(cfg: &ExperimentConfig, data: &Dataset, cache: &AnnotationCache) -> ExperimentResult {
    let outcomes: Vec<(u64, Result<SeedRun, PipelineError>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            info!("seed {seed}: starting {}", cfg.mode);
            (seed, run_seed(cfg, data, seed, cache))
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(run) => runs.push(run),
            Err(e) => {
                warn!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
    ExperimentResult {
        config: cfg.clone(),
        dataset: data.name.clone(),
        aggregate: aggregate(&reports).ok(),
        runs,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{AnnotatorKind, Budget, ReportFile};

    fn fixture(mode: Mode) -> (ExperimentConfig, Dataset) {
        let mut cfg = ExperimentConfig::synthetic_fixture(mode, 0);
        cfg.seeds = vec![0, 1];
        let data = Dataset::load(&cfg, Path::new(".")).unwrap();
        (cfg, data)
    }

    fn check_guards(run: &SeedRun) {
        let nodes: Vec<usize> = run
            .llm_labels
            .iter()
            .flat_map(|a| a.entries.keys().copied())
            .chain(run.selection.selected.iter().copied())
            .collect();
        guard_leakage(&nodes, &run.splits, "test").unwrap();
        assert!(run.ledger.is_consistent());
        assert!(run.ledger.human_used <= run.ledger.human_total);
        assert!(run.ledger.llm_used <= run.ledger.llm_total);
    }

    #[test]
    fn stage_seeds_differ() {
        let a = stage_seed(3, Stage::Filter);
        assert_ne!(a, stage_seed(3, Stage::Select));
        assert_ne!(a, stage_seed(4, Stage::Filter));
        assert_eq!(a, stage_seed(3, Stage::Filter));
    }

    #[test]
    fn leakage_guard_rejects_held_out_nodes() {
        let (cfg, data) = fixture(Mode::LlmGood);
        let s = make_splits_with(&data.graph, &data.classes, 0, cfg.splits).unwrap();
        assert!(guard_leakage(&s.candidate, &s, "x").is_ok());
        let bad = vec![s.candidate[0], s.test[3]];
        match guard_leakage(&bad, &s, "annotate") {
            Err(PipelineError::Leakage { stage, node }) => {
                assert_eq!(stage, "annotate");
                assert_eq!(node, s.test[3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oracle_pipeline_is_accurate_and_guarded() {
        let (cfg, data) = fixture(Mode::LlmGood);
        let res = run_pipeline(&cfg, &data, &AnnotationCache::in_memory());
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        for run in &res.runs {
            check_guards(run);
            assert_eq!(run.ledger.human_used, 40);
            assert_eq!(run.ledger.llm_used, 100);
            assert!(run.report.id_proportion.unwrap() >= 0.9);
        }
        let agg = res.aggregate.unwrap();
        assert!(agg.id_acc.mean >= 0.9, "{agg:?}");
        assert!(agg.auroc.mean >= 0.9, "{agg:?}");
    }

    #[test]
    fn zero_noise_mock_matches_oracle() {
        let (cfg, data) = fixture(Mode::LlmGoodCombined);
        let mut mock = cfg.clone();
        mock.annotator.kind = AnnotatorKind::Mock;
        mock.annotator.noise = 0.0;
        let a = run_pipeline(&cfg, &data, &AnnotationCache::in_memory());
        let b = run_pipeline(&mock, &data, &AnnotationCache::in_memory());
        let ra: Vec<_> = a.runs.iter().map(|r| &r.report).collect();
        let rb: Vec<_> = b.runs.iter().map(|r| &r.report).collect();
        assert_eq!(ra, rb);
    }

    #[test]
    fn reports_are_deterministic() {
        let (mut cfg, data) = fixture(Mode::LlmGood);
        cfg.annotator.kind = AnnotatorKind::Mock;
        cfg.annotator.noise = 0.3;
        let a = ReportFile::from_result(&run_pipeline(&cfg, &data, &AnnotationCache::in_memory())).to_json();
        let b = ReportFile::from_result(&run_pipeline(&cfg, &data, &AnnotationCache::in_memory())).to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn every_mode_runs_within_budget() {
        for mode in Mode::ALL {
            let (mut cfg, data) = fixture(mode);
            cfg.seeds = vec![5];
            cfg.human_budget = Budget::PerClass(5);
            cfg.classifier.epochs = 60;
            cfg.filter.train.epochs = 60;
            if mode == Mode::LlmGoodF {
                cfg.selection.embedding = Embedding::Featprop;
            }
            let res = run_pipeline(&cfg, &data, &AnnotationCache::in_memory());
            assert!(res.failures.is_empty(), "{mode}: {:?}", res.failures);
            let run = &res.runs[0];
            check_guards(run);
            assert_eq!(run.ledger.human_used, 20, "{mode}");
            if mode.is_baseline() {
                assert_eq!(run.ledger.llm_used, 0);
                assert!(run.llm_labels.is_none());
            }
        }
    }

    #[test]
    fn combined_without_human_budget_trains_on_llm_labels() {
        let (mut cfg, data) = fixture(Mode::LlmGoodCombined);
        cfg.seeds = vec![0];
        cfg.human_budget = Budget::Absolute(0);
        let res = run_pipeline(&cfg, &data, &AnnotationCache::in_memory());
        assert!(res.failures.is_empty(), "{:?}", res.failures);
        let run = &res.runs[0];
        assert_eq!(run.training.oracle_labels, 0);
        assert!(run.training.llm_labels > 0);
        assert_eq!(run.report.id_proportion, None);
    }

    #[test]
    fn failed_seed_is_recorded() {
        let (mut cfg, data) = fixture(Mode::LlmGood);
        cfg.human_budget = Budget::Absolute(0);
        let res = run_pipeline(&cfg, &data, &AnnotationCache::in_memory());
        assert!(res.runs.is_empty());
        assert_eq!(res.failures.len(), 2);
        assert!(res.failures[0].error.contains("empty"), "{}", res.failures[0].error);
        assert!(res.aggregate.is_none());
    }
}
