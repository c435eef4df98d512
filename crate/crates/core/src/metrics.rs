//! ID accuracy and threshold-free OOD detection metrics. OOD is the positive
//! class throughout; scores are "higher = more OOD".

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("need at least one positive (OOD) and one negative (ID) example")]
    DegenerateLabels,
    #[error("no ID nodes in the test set")]
    EmptyIdTestSet,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("score {0} is not finite")]
    NonFiniteScore(usize),
    #[error("cannot aggregate an empty report list")]
    NoReports,
}

/// Fraction of `id_test_nodes` whose prediction equals the truth. Both
/// vectors are indexed by node id and carry dense ID class indices.
pub fn id_accuracy(
    pred: &[usize],
    truth: &[usize],
    id_test_nodes: &[usize],
) -> Result<f64, MetricError> {
    if id_test_nodes.is_empty() {
        return Err(MetricError::EmptyIdTestSet);
    }
    let correct = id_test_nodes.iter().filter(|&&v| pred[v] == truth[v]).count();
    Ok(correct as f64 / id_test_nodes.len() as f64)
}

fn check(scores: &[f64], is_ood: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != is_ood.len() {
        return Err(MetricError::LengthMismatch(scores.len(), is_ood.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore(i));
    }
    let pos = is_ood.iter().filter(|&&b| b).count();
    Ok((pos, is_ood.len() - pos))
}

/// Sorts by descending score and returns `(positives, negatives)` per tie block.
fn tie_blocks_desc(scores: &[f64], is_ood: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            blocks.push((0, 0));
            prev = Some(scores[i]);
        }
        let b = blocks.last_mut().expect("pushed above");
        if is_ood[i] {
            b.0 += 1;
        } else {
            b.1 += 1;
        }
    }
    blocks
}

/// Mann-Whitney AUROC with ties counted as one half.
pub fn auroc(scores: &[f64], is_ood: &[bool]) -> Result<f64, MetricError> {
    let (p, n) = check(scores, is_ood)?;
    if p == 0 || n == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    // walk from the highest score down; negatives seen so far outrank nothing
    let mut wins = 0.0;
    let mut neg_below = n;
    for (bp, bn) in tie_blocks_desc(scores, is_ood) {
        neg_below -= bn;
        wins += bp as f64 * neg_below as f64 + 0.5 * bp as f64 * bn as f64;
    }
    Ok(wins / (p as f64 * n as f64))
}

/// Average precision. Tied scores form one block whose precision is taken
/// after the whole block is admitted.
pub fn aupr(scores: &[f64], is_ood: &[bool]) -> Result<f64, MetricError> {
    let (p, _) = check(scores, is_ood)?;
    if p == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (bp, bn) in tie_blocks_desc(scores, is_ood) {
        tp += bp;
        fp += bn;
        let recall = tp as f64 / p as f64;
        ap += (recall - prev_recall) * (tp as f64 / (tp + fp) as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Smallest false positive rate over thresholds `score >= t` whose true
/// positive rate reaches 95%.
pub fn fpr_at_95_tpr(scores: &[f64], is_ood: &[bool]) -> Result<f64, MetricError> {
    let (p, n) = check(scores, is_ood)?;
    if p == 0 || n == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    for (bp, bn) in tie_blocks_desc(scores, is_ood) {
        tp += bp;
        fp += bn;
        if 100 * tp >= 95 * p {
            return Ok(fp as f64 / n as f64);
        }
    }
    unreachable!("the lowest threshold admits every positive")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub id_acc: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_95: f64,
    pub id_proportion: Option<f64>,
    pub config_echo: serde_json::Value,
}

/// Computes all four headline metrics over a test set.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    seed: u64,
    pred: &[usize],
    truth: &[usize],
    id_test_nodes: &[usize],
    test_scores: &[f64],
    test_is_ood: &[bool],
    id_proportion: Option<f64>,
    config_echo: serde_json::Value,
) -> Result<EvalReport, MetricError> {
    Ok(EvalReport {
        seed,
        id_acc: id_accuracy(pred, truth, id_test_nodes)?,
        auroc: auroc(test_scores, test_is_ood)?,
        aupr: aupr(test_scores, test_is_ood)?,
        fpr_at_95: fpr_at_95_tpr(test_scores, test_is_ood)?,
        id_proportion,
        config_echo,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (N-1 denominator); 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }

    /// Percentages with two decimals, e.g. `85.20±2.68`.
    pub fn percent(&self) -> String {
        format!("{:.2}±{:.2}", self.mean * 100.0, self.std * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub id_acc: MeanStd,
    pub auroc: MeanStd,
    pub aupr: MeanStd,
    pub fpr_at_95: MeanStd,
    pub id_proportion: Option<MeanStd>,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport, MetricError> {
    if reports.is_empty() {
        return Err(MetricError::NoReports);
    }
    let col = |f: fn(&EvalReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let props: Vec<f64> = reports.iter().filter_map(|r| r.id_proportion).collect();
    Ok(AggregateReport {
        seeds: reports.iter().map(|r| r.seed).collect(),
        id_acc: col(|r| r.id_acc),
        auroc: col(|r| r.auroc),
        aupr: col(|r| r.aupr),
        fpr_at_95: col(|r| r.fpr_at_95),
        id_proportion: (!props.is_empty()).then(|| MeanStd::of(&props)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trivial_cases() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let y = [true, true, false, false];
        assert_eq!(auroc(&s, &y).unwrap(), 1.0);
        assert_eq!(aupr(&s, &y).unwrap(), 1.0);
        assert_eq!(fpr_at_95_tpr(&s, &y).unwrap(), 0.0);

        let flat = [0.5; 4];
        assert_eq!(auroc(&flat, &y).unwrap(), 0.5);
        assert_eq!(fpr_at_95_tpr(&flat, &y).unwrap(), 1.0);

        // single positive ranked last among five
        let s = [5.0, 4.0, 3.0, 2.0, 1.0];
        let y = [false, false, false, false, true];
        assert!((aupr(&s, &y).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_labels() {
        assert_eq!(auroc(&[1.0, 2.0], &[true, true]), Err(MetricError::DegenerateLabels));
        assert_eq!(aupr(&[1.0, 2.0], &[false, false]), Err(MetricError::DegenerateLabels));
        assert_eq!(fpr_at_95_tpr(&[1.0], &[true]), Err(MetricError::DegenerateLabels));
        assert_eq!(auroc(&[1.0], &[true, false]), Err(MetricError::LengthMismatch(1, 2)));
        assert_eq!(
            auroc(&[f64::NAN, 1.0], &[true, false]),
            Err(MetricError::NonFiniteScore(0))
        );
    }

    #[test]
    fn accuracy_counts_only_id_test_nodes() {
        let truth = [0, 1, 2, 3, 0, 1, 2, 3, 9];
        assert_eq!(id_accuracy(&truth, &truth, &[0, 1, 2, 3]).unwrap(), 1.0);
        let constant = [0; 9];
        assert_eq!(id_accuracy(&constant, &truth, &[0, 1, 2, 3, 4, 5, 6, 7]).unwrap(), 0.25);
        assert_eq!(id_accuracy(&constant, &truth, &[]), Err(MetricError::EmptyIdTestSet));
    }

    #[test]
    fn aggregation() {
        let r = |seed, v| EvalReport {
            seed,
            id_acc: v,
            auroc: v,
            aupr: v,
            fpr_at_95: v,
            id_proportion: None,
            config_echo: serde_json::Value::Null,
        };
        let one = aggregate(&[r(0, 0.7)]).unwrap();
        assert_eq!(one.id_acc, MeanStd { mean: 0.7, std: 0.0 });
        let two = aggregate(&[r(0, 0.8), r(1, 0.9)]).unwrap();
        assert!((two.auroc.mean - 0.85).abs() < 1e-12);
        // sqrt(((0.05)^2 * 2) / 1)
        assert!((two.auroc.std - 0.070_710_678_118_654_75).abs() < 1e-12);
        assert_eq!(two.id_proportion, None);
        assert_eq!(aggregate(&[]), Err(MetricError::NoReports));
    }

    #[test]
    fn percent_format() {
        assert_eq!(MeanStd { mean: 0.8520, std: 0.0268 }.percent(), "85.20±2.68");
    }

    // Independent oracles.

    fn auroc_pairs(s: &[f64], y: &[bool]) -> f64 {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in (0..s.len()).filter(|&i| y[i]) {
            for j in (0..s.len()).filter(|&j| !y[j]) {
                pairs += 1.0;
                if s[i] > s[j] {
                    wins += 1.0;
                } else if s[i] == s[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    fn thresholds_desc(s: &[f64]) -> Vec<f64> {
        let mut t = s.to_vec();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        t
    }

    fn counts_at(s: &[f64], y: &[bool], t: f64) -> (usize, usize) {
        let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i]).count();
        let fp = (0..s.len()).filter(|&i| s[i] >= t && !y[i]).count();
        (tp, fp)
    }

    fn aupr_sweep(s: &[f64], y: &[bool]) -> f64 {
        let p = y.iter().filter(|&&b| b).count() as f64;
        let mut prev = 0.0;
        let mut ap = 0.0;
        for t in thresholds_desc(s) {
            let (tp, fp) = counts_at(s, y, t);
            let r = tp as f64 / p;
            ap += (r - prev) * tp as f64 / (tp + fp) as f64;
            prev = r;
        }
        ap
    }

    fn fpr95_sweep(s: &[f64], y: &[bool]) -> f64 {
        let p = y.iter().filter(|&&b| b).count();
        let n = y.len() - p;
        thresholds_desc(s)
            .into_iter()
            .map(|t| counts_at(s, y, t))
            .filter(|&(tp, _)| 100 * tp >= 95 * p)
            .map(|(_, fp)| fp as f64 / n as f64)
            .fold(f64::INFINITY, f64::min)
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..300).prop_flat_map(|n| {
            (
                // coarse grid values force plenty of ties
                prop::collection::vec((0u8..40).prop_map(|v| v as f64 / 8.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
    }

    proptest! {
        #[test]
        fn metrics_match_oracles((s, y) in instance()) {
            prop_assert!((auroc(&s, &y).unwrap() - auroc_pairs(&s, &y)).abs() < 1e-9);
            prop_assert!((aupr(&s, &y).unwrap() - aupr_sweep(&s, &y)).abs() < 1e-9);
            prop_assert_eq!(fpr_at_95_tpr(&s, &y).unwrap(), fpr95_sweep(&s, &y));
        }

        #[test]
        fn auroc_negation_complements((s, y) in instance()) {
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let total = auroc(&s, &y).unwrap() + auroc(&neg, &y).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auroc_monotone_transform_invariant((s, y) in instance()) {
            let t: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(auroc(&s, &y).unwrap(), auroc(&t, &y).unwrap());
        }

        #[test]
        fn metrics_lie_in_unit_interval((s, y) in instance()) {
            for m in [auroc(&s, &y).unwrap(), aupr(&s, &y).unwrap(), fpr_at_95_tpr(&s, &y).unwrap()] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }
}
