//! K+1 filter training, candidate filtering, budgeted node selection and
//! oracle labeling with the clean/noisy merge rule.

mod budget;
mod filter;
mod kmedoids;
mod oracle;
mod strategy;

pub use budget::{BudgetKind, BudgetLedger, LedgerEvent};
pub use filter::{filter_candidates, train_filter, CandidateIdSet, FilterOutcome, UNKNOWN_WEIGHT_GRID};
pub use kmedoids::{featprop_embeddings, kmedoids, KMedoidsFit};
pub use oracle::{
    merge_labels, oracle_label, MergeMode, MergedLabels, OracleLabels, RevealedLabel, SelectionRecord,
};
pub use strategy::{
    select_kmedoids, select_random, select_uncertainty, Embedding, SelectionResult, SelectionStrategy,
};

use thiserror::Error;

use crate::gcn::TrainError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectError {
    #[error("{kind} budget exhausted: requested {requested}, remaining {remaining}")]
    BudgetExhausted {
        kind: BudgetKind,
        requested: usize,
        remaining: usize,
    },
    #[error("annotation set is empty")]
    EmptyAnnotations,
    #[error("unknown-class weight grid is empty")]
    EmptyWeightGrid,
    #[error(transparent)]
    Train(#[from] TrainError),
}
