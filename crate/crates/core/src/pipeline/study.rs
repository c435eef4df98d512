use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentConfig;
use super::run::{
    annotator_spec, evaluate_logits, guard_leakage, stage_seed, train_classifier, Dataset, PipelineError, Stage,
};
use crate::annotator::{annotate, AnnotationCache};
use crate::gcn::{LabeledTrainingSet, Provenance, TrainConfig};
use crate::graph::make_splits_with;
use crate::metrics::MeanStd;
use crate::select::select_random;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curve {
    /// First `c` candidates the annotator called ID, with the annotator's labels.
    Noisy,
    /// First `c` truly ID candidates, with ground-truth labels.
    Clean,
}

impl Curve {
    pub fn as_str(self) -> &'static str {
        match self {
            Curve::Noisy => "noisy",
            Curve::Clean => "clean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    pub seed: u64,
    pub curve: Curve,
    pub count: usize,
    pub id_acc: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub curve: Curve,
    pub count: usize,
    pub id_acc: MeanStd,
    pub auroc: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub dataset: String,
    pub counts: Vec<usize>,
    pub points: Vec<StudyPoint>,
    pub summary: Vec<CurveSummary>,
}

impl StudyResult {
    pub fn mean_id_acc(&self, curve: Curve, count: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.curve == curve && s.count == count)
            .map(|s| s.id_acc.mean)
    }

    /// Tab-separated summary, one row per curve and count.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("curve\tcount\tid_acc_mean\tid_acc_std\tauroc_mean\tauroc_std\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                s.curve.as_str(),
                s.count,
                s.id_acc.mean,
                s.id_acc.std,
                s.auroc.mean,
                s.auroc.std
            ));
        }
        out
    }
}

fn study_seed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    counts: &[usize],
    seed: u64,
    cache: &AnnotationCache,
) -> Result<Vec<StudyPoint>, PipelineError> {
    let k = data.classes.k();
    let splits = make_splits_with(&data.graph, &data.classes, seed, cfg.splits)?;
    let order = select_random(&splits.candidate, splits.candidate.len(), stage_seed(seed, Stage::StudyOrder)).selected;
    guard_leakage(&order, &splits, "study")?;
    let spec = annotator_spec(cfg, &data.classes, seed)?;
    let ann = annotate(&order, &data.graph, &data.classes, &spec, &cfg.annotator.template(), cache)?;

    let noisy: Vec<(usize, usize)> = order
        .iter()
        .filter_map(|&v| ann.label(v).filter(|&c| c < k).map(|c| (v, c)))
        .collect();
    let clean: Vec<(usize, usize)> = order
        .iter()
        .filter_map(|&v| data.classes.dense_index(data.graph.label(v)).map(|c| (v, c)))
        .collect();
    let max = counts.iter().copied().max().unwrap_or(0);
    if max > noisy.len() || max > clean.len() {
        return Err(PipelineError::Insufficient(format!(
            "count {max} exceeds available pools ({} noisy, {} clean)",
            noisy.len(),
            clean.len()
        )));
    }

    let ccfg = TrainConfig {
        seed: stage_seed(seed, Stage::Classifier),
        ..cfg.classifier.clone()
    };
    let mut points = Vec::new();
    for (curve, pool, prov) in [(Curve::Noisy, &noisy, Provenance::Llm), (Curve::Clean, &clean, Provenance::Oracle)] {
        for &count in counts {
            let (nodes, labels): (Vec<usize>, Vec<usize>) = pool[..count].iter().copied().unzip();
            let set = LabeledTrainingSet::new(nodes, labels, vec![prov; count])?;
            let tcfg = if count == 0 {
                TrainConfig { epochs: 0, ..ccfg.clone() }
            } else {
                ccfg.clone()
            };
            let trained = train_classifier(data, &splits, &set, &tcfg)?;
            let (_, _, report) = evaluate_logits(
                data,
                &splits,
                &trained.activations.logits,
                cfg.detector,
                cfg,
                seed,
                None,
                json!(null),
            )?;
            points.push(StudyPoint {
                seed,
                curve,
                count,
                id_acc: report.id_acc,
                auroc: report.auroc,
            });
        }
    }
    Ok(points)
}

/// For each seed and count, trains the classifier on `count` noisy ID labels
/// and on `count` clean ID labels drawn from the same shuffled candidate order.
pub fn run_upper_bound_study(
    cfg: &ExperimentConfig,
    data: &Dataset,
    counts: &[usize],
    cache: &AnnotationCache,
) -> Result<StudyResult, PipelineError> {
    let per_seed: Vec<Vec<StudyPoint>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| study_seed(cfg, data, counts, seed, cache))
        .collect::<Result<_, _>>()?;
    let points: Vec<StudyPoint> = per_seed.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for curve in [Curve::Noisy, Curve::Clean] {
        for &count in counts {
            let sel: Vec<&StudyPoint> = points.iter().filter(|p| p.curve == curve && p.count == count).collect();
            let acc: Vec<f64> = sel.iter().map(|p| p.id_acc).collect();
            let auroc: Vec<f64> = sel.iter().map(|p| p.auroc).collect();
            summary.push(CurveSummary {
                curve,
                count,
                id_acc: MeanStd::of(&acc),
                auroc: MeanStd::of(&auroc),
            });
        }
    }
    Ok(StudyResult {
        dataset: data.name.clone(),
        counts: counts.to_vec(),
        points,
        summary,
    })
}
