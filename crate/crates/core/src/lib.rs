//! Few-shot OOD detection on text-attributed graphs with an LLM pre-filter.
//!
//! A K+1-way GCN trained on LLM annotations removes likely-OOD candidates,
//! a small human budget labels a selection from what remains, and a K-way
//! GCN classifier trained on those labels is scored by an OOD detector.
//!
//! ```no_run
//! use good_core::{annotator::AnnotationCache, pipeline::*};
//!
//! let cfg = ExperimentConfig::synthetic_fixture(Mode::LlmGood, 0);
//! let data = Dataset::load(&cfg, std::path::Path::new(".")).unwrap();
//! let result = run_pipeline(&cfg, &data, &AnnotationCache::in_memory());
//! println!("{:?}", result.aggregate);
//! ```

pub mod annotator;
pub mod bundle;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod ood;
pub mod pipeline;
pub mod select;
pub mod synth;

pub use annotator::{AnnotationSet, AnnotatorSpec, LabelOutcome, PromptKind, PromptTemplate};
pub use bundle::{read_bundle, write_bundle, Bundle, BundleMeta};
pub use gcn::{GcnModel, LabeledTrainingSet, Provenance, TrainConfig};
pub use graph::{ClassSpace, NormAdj, SplitAssignment, SplitSizes, TagGraph};
pub use metrics::{AggregateReport, EvalReport, MeanStd};
pub use ood::{Detector, OodScores, Propagation};
pub use pipeline::{Budget, Dataset, ExperimentConfig, Mode, PipelineError};
pub use select::{BudgetLedger, CandidateIdSet, SelectionResult, SelectionStrategy};
