//! Experiment configuration, per-seed orchestration, the upper-bound study
//! and report writing.

mod config;
mod report;
mod run;
mod study;

pub use config::*;
pub use report::*;
pub use run::*;
pub use study::*;
