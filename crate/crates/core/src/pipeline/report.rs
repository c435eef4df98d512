use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode};
use super::run::{Dataset, ExperimentResult, PipelineError, SeedFailure, StageTiming};
use super::study::StudyResult;
use crate::metrics::{AggregateReport, EvalReport};
use crate::ood::{Detector, OodScores};
use ndarray::Array1;

/// Contents of `report.json`. Holds no timings or paths, so identical runs
/// serialize to identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub mode: Mode,
    pub dataset: String,
    pub config: ExperimentConfig,
    pub per_seed: Vec<EvalReport>,
    pub failures: Vec<SeedFailure>,
    pub aggregate: Option<AggregateReport>,
}

impl ReportFile {
    pub fn from_result(result: &ExperimentResult) -> Self {
        Self {
            mode: result.config.mode,
            dataset: result.dataset.clone(),
            config: result.config.clone(),
            per_seed: result.runs.iter().map(|r| r.report.clone()).collect(),
            failures: result.failures.clone(),
            aggregate: result.aggregate.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize)]
struct ExperimentFile<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    input_hashes: &'a BTreeMap<String, String>,
    timings: BTreeMap<u64, &'a [StageTiming]>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    s.push('\n');
    write(path, s)
}

const TABLE_HEADER: &str = "| Mode | Dataset | ID ACC | AUROC | AUPR | FPR@95 | ID prop |\n|---|---|---|---|---|---|---|\n";

fn table_row(out: &mut String, report: &ReportFile) {
    match &report.aggregate {
        Some(a) => {
            let prop = a.id_proportion.map_or_else(|| "-".to_string(), |p| p.percent());
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                report.mode,
                report.dataset,
                a.id_acc.percent(),
                a.auroc.percent(),
                a.aupr.percent(),
                a.fpr_at_95.percent(),
                prop
            );
        }
        None => {
            let _ = writeln!(out, "| {} | {} | - | - | - | - | - |", report.mode, report.dataset);
        }
    }
}

/// Markdown summary of one report, with failed seeds listed below the table.
pub fn render_markdown(report: &ReportFile) -> String {
    let mut out = String::from(TABLE_HEADER);
    table_row(&mut out, report);
    if !report.failures.is_empty() {
        out.push_str("\nFailed seeds:\n\n");
        for f in &report.failures {
            let _ = writeln!(out, "- seed {}: {}", f.seed, f.error);
        }
    }
    out
}

/// One row per report, in the order given.
pub fn comparison_table(reports: &[ReportFile]) -> String {
    let mut out = String::from(TABLE_HEADER);
    for r in reports {
        table_row(&mut out, r);
    }
    out
}

/// Writes `report.json`, `report.md`, `experiment.json` and one `seed_<s>/`
/// directory per successful seed.
pub fn write_outputs(result: &ExperimentResult, data: &Dataset, out_dir: &Path) -> Result<ReportFile, PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let report = ReportFile::from_result(result);
    write(&out_dir.join("report.json"), report.to_json())?;
    write(&out_dir.join("report.md"), render_markdown(&report))?;
    write_json(
        &out_dir.join("experiment.json"),
        &ExperimentFile {
            version: env!("CARGO_PKG_VERSION"),
            config: &result.config,
            input_hashes: &data.input_hashes,
            timings: result.runs.iter().map(|r| (r.seed, r.timings.as_slice())).collect(),
        },
    )?;
    for run in &result.runs {
        let dir = out_dir.join(format!("seed_{}", run.seed));
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_json(&dir.join("splits.json"), &run.splits)?;
        write_json(&dir.join("selection.json"), &run.selection)?;
        write_json(&dir.join("ledger.json"), &run.ledger)?;
        if let Some(filter) = &run.filter {
            write_json(&dir.join("filter.json"), filter)?;
        }
        if let Some(ann) = &run.llm_labels {
            ann.save(dir.join("llm_labels.json"))?;
        }
        write_scores(&dir.join("scores.tsv"), &run.scores, &run.predictions)?;
    }
    Ok(report)
}

/// One row per node: id, detector, OOD score and predicted class. Scores
/// use the shortest round-trip float form.
pub fn write_scores(path: &Path, scores: &OodScores, predictions: &[usize]) -> Result<(), PipelineError> {
    let mut tsv = String::from("node_id\tdetector\tscore\tprediction\n");
    let det = scores.detector.as_str();
    for (v, s) in scores.scores.iter().enumerate() {
        let _ = writeln!(tsv, "{v}\t{det}\t{s}\t{}", predictions[v]);
    }
    write(path, tsv)
}

pub fn read_scores(path: &Path) -> Result<(OodScores, Vec<usize>), PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |line: usize, m: &str| PipelineError::Io(format!("{}:{line}: {m}", path.display()));
    let mut detector = None;
    let mut scores = Vec::new();
    let mut preds = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, det, score, pred] = cols[..] else {
            return Err(bad(i + 1, "expected 4 columns"));
        };
        if id.parse::<usize>().ok() != Some(scores.len()) {
            return Err(bad(i + 1, "node ids must be 0..n in order"));
        }
        let det: Detector = det.parse().map_err(|e: String| bad(i + 1, &e))?;
        if *detector.get_or_insert(det) != det {
            return Err(bad(i + 1, "mixed detectors"));
        }
        scores.push(score.parse::<f64>().map_err(|e| bad(i + 1, &e.to_string()))?);
        preds.push(pred.parse::<usize>().map_err(|e| bad(i + 1, &e.to_string()))?);
    }
    let detector = detector.ok_or_else(|| bad(1, "no rows"))?;
    Ok((
        OodScores {
            detector,
            scores: Array1::from(scores),
        },
        preds,
    ))
}

/// Writes `study.json` and `curve.tsv`.
pub fn write_study(study: &StudyResult, out_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    write_json(&out_dir.join("study.json"), study)?;
    write(&out_dir.join("curve.tsv"), study.to_tsv())
}
