use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{BudgetKind, BudgetLedger, SelectError, SelectionResult, SelectionStrategy};
use crate::annotator::AnnotationSet;
use crate::gcn::{LabeledTrainingSet, Provenance};
use crate::graph::{ClassSpace, TagGraph};

/// Outcome of human annotation of a selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLabels {
    /// `(node, dense ID label)` for selected ID nodes, in selection order.
    pub labeled: Vec<(usize, usize)>,
    /// Selected nodes revealed as OOD, in selection order.
    pub revealed_ood: Vec<usize>,
    /// `|labeled| / |selected|`; `None` for an empty selection.
    pub id_proportion: Option<f64>,
}

/// Labels every selected node with ground truth, charging one unit of human
/// budget per node whatever the outcome.
pub fn oracle_label(
    selected: &[usize],
    graph: &TagGraph,
    classes: &ClassSpace,
    ledger: &mut BudgetLedger,
    stage: &str,
) -> Result<OracleLabels, SelectError> {
    ledger.consume(BudgetKind::Human, stage, selected.len())?;
    let mut labeled = Vec::new();
    let mut revealed_ood = Vec::new();
    for &v in selected {
        match classes.dense_index(graph.label(v)) {
            Some(c) => labeled.push((v, c)),
            None => revealed_ood.push(v),
        }
    }
    let id_proportion = (!selected.is_empty()).then(|| labeled.len() as f64 / selected.len() as f64);
    Ok(OracleLabels {
        labeled,
        revealed_ood,
        id_proportion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    HumanOnly,
    Combined,
}

impl FromStr for MergeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "human_only" => Ok(Self::HumanOnly),
            "combined" => Ok(Self::Combined),
            _ => Err(format!("unknown merge mode `{s}`; expected human_only or combined")),
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HumanOnly => "human_only",
            Self::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergedLabels {
    pub set: LabeledTrainingSet,
    /// Nodes labeled by both sources with different ID labels.
    pub conflict_count: usize,
}

/// Classifier training labels in the dense `0..K` alphabet, sorted by node.
/// Oracle labels win over LLM labels; LLM `unknown` labels are dropped.
pub fn merge_labels(oracle: &OracleLabels, llm: Option<&AnnotationSet>, mode: MergeMode) -> MergedLabels {
    let mut merged: BTreeMap<usize, (usize, Provenance)> = BTreeMap::new();
    let mut conflict_count = 0;
    if let (MergeMode::Combined, Some(llm)) = (mode, llm) {
        for (v, label) in llm.id_labeled() {
            merged.insert(v, (label, Provenance::Llm));
        }
    }
    for &(v, label) in &oracle.labeled {
        if let Some((prev, Provenance::Llm)) = merged.insert(v, (label, Provenance::Oracle)) {
            if prev != label {
                conflict_count += 1;
            }
        }
    }
    let (nodes, rest): (Vec<usize>, Vec<(usize, Provenance)>) = merged.into_iter().unzip();
    let (labels, prov) = rest.into_iter().unzip();
    MergedLabels {
        set: LabeledTrainingSet::new(nodes, labels, prov).expect("map keys are unique"),
        conflict_count,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealedLabel {
    pub node: usize,
    /// Dense ID label, `None` if the node turned out OOD.
    pub label: Option<usize>,
}

/// Contents of `selection.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub strategy: SelectionStrategy,
    pub seed: u64,
    pub budget: usize,
    pub selected: Vec<usize>,
    pub revealed: Vec<RevealedLabel>,
    pub id_proportion: Option<f64>,
}

impl SelectionRecord {
    pub fn new(selection: &SelectionResult, labels: &OracleLabels) -> Self {
        let ids: BTreeMap<usize, usize> = labels.labeled.iter().copied().collect();
        Self {
            strategy: selection.strategy,
            seed: selection.seed,
            budget: selection.budget,
            selected: selection.selected.clone(),
            revealed: selection
                .selected
                .iter()
                .map(|&node| RevealedLabel {
                    node,
                    label: ids.get(&node).copied(),
                })
                .collect(),
            id_proportion: labels.id_proportion,
        }
    }
}
