//! Experiment configuration: a TOML document with nested sections.
//!
//! ```toml
//! mode = "llm_good"            # see `Mode` for all values
//! dataset = "data/cora"        # bundle directory, or a [synthetic] section
//! human_budget = "10K"         # "<n>K" = n per ID class, or an absolute integer
//! llm_budget = 200
//! seeds = [0, 1, 2, 3, 4]
//! detector = "energy"
//!
//! [annotator]
//! kind = "mock"                # oracle | mock | remote
//! noise = 0.2
//!
//! [filter]
//! unknown_weights = [0.05, 0.1, 0.2, 0.3, 0.5]
//! [filter.train]
//! epochs = 200
//!
//! [classifier]
//! hidden_dim = 32
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::annotator::{MockConfusion, PromptKind, PromptTemplate, RetryPolicy};
use crate::gcn::TrainConfig;
use crate::graph::{ClassSpace, SplitSizes};
use crate::ood::{Detector, Propagation};
use crate::select::{Embedding, SelectionStrategy, UNKNOWN_WEIGHT_GRID};
use crate::synth::SbmSpec;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{path}: {reason}")]
pub struct ConfigError {
    /// Dotted location in the document, `.` for the root.
    pub path: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    LlmGood,
    LlmGoodF,
    LlmGoodCombined,
    BaselineMsp,
    BaselineEntropy,
    BaselineEnergy,
    BaselineUncertainty,
    BaselineFeatprop,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Self::LlmGood,
        Self::LlmGoodF,
        Self::LlmGoodCombined,
        Self::BaselineMsp,
        Self::BaselineEntropy,
        Self::BaselineEnergy,
        Self::BaselineUncertainty,
        Self::BaselineFeatprop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LlmGood => "llm_good",
            Self::LlmGoodF => "llm_good_f",
            Self::LlmGoodCombined => "llm_good_combined",
            Self::BaselineMsp => "baseline_msp",
            Self::BaselineEntropy => "baseline_entropy",
            Self::BaselineEnergy => "baseline_energy",
            Self::BaselineUncertainty => "baseline_uncertainty",
            Self::BaselineFeatprop => "baseline_featprop",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            Self::BaselineMsp
                | Self::BaselineEntropy
                | Self::BaselineEnergy
                | Self::BaselineUncertainty
                | Self::BaselineFeatprop
        )
    }

    /// Detector used to score a baseline's final classifier.
    pub fn baseline_detector(self) -> Option<Detector> {
        match self {
            Self::BaselineMsp | Self::BaselineUncertainty | Self::BaselineFeatprop => Some(Detector::Msp),
            Self::BaselineEntropy => Some(Detector::Entropy),
            Self::BaselineEnergy => Some(Detector::Energy),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
            format!("unknown mode `{s}`; valid modes: {}", valid.join(", "))
        })
    }
}

impl Serialize for Mode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Human budget: absolute node count or a multiple of K.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    Absolute(usize),
    PerClass(usize),
}

impl Budget {
    pub fn resolve(self, k: usize) -> usize {
        match self {
            Budget::Absolute(n) => n,
            Budget::PerClass(m) => m * k,
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::PerClass(10)
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Absolute(n) => write!(f, "{n}"),
            Budget::PerClass(m) => write!(f, "{m}K"),
        }
    }
}

impl FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || format!("invalid budget `{s}`; expected a non-negative integer or `<n>K`");
        if let Some(m) = t.strip_suffix(['K', 'k']) {
            let m = m.trim().trim_end_matches(['x', '×', '*']).trim();
            if m.starts_with('-') {
                return Err(format!("budget must be non-negative, got `{s}`"));
            }
            m.parse().map(Budget::PerClass).map_err(|_| bad())
        } else if t.starts_with('-') {
            Err(format!("budget must be non-negative, got `{s}`"))
        } else {
            t.parse().map(Budget::Absolute).map_err(|_| bad())
        }
    }
}

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Budget::Absolute(n) => s.serialize_u64(*n as u64),
            Budget::PerClass(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) if n < 0 => Err(serde::de::Error::custom(format!("budget must be non-negative, got {n}"))),
            Raw::Int(n) => Ok(Budget::Absolute(n as usize)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    #[default]
    Oracle,
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    pub kind: AnnotatorKind,
    /// Mock only: uniform label noise in [0, 1].
    pub noise: f64,
    /// Mock only: explicit `C × (K+1)` confusion matrix, overrides `noise`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<f64>>>,
    /// Remote only: OpenAI-compatible base URL.
    pub endpoint: String,
    pub model_name: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub prompt: PromptKind,
    pub object_word: String,
    /// Reply cache; relative paths resolve against the output directory.
    pub cache: PathBuf,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            kind: AnnotatorKind::Oracle,
            noise: 0.0,
            confusion: None,
            endpoint: "https://api.openai.com/v1".into(),
            model_name: "gpt-4o-mini".into(),
            max_in_flight: 8,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            prompt: PromptKind::Long,
            object_word: "paper".into(),
            cache: PathBuf::from("annotations.jsonl"),
        }
    }
}

impl AnnotatorConfig {
    pub fn template(&self) -> PromptTemplate {
        PromptTemplate::new(self.prompt, &self.object_word)
    }

    pub fn mock_confusion(&self, classes: &ClassSpace) -> Result<MockConfusion, ConfigError> {
        match &self.confusion {
            Some(rows) => MockConfusion::new(rows.clone(), classes)
                .map_err(|e| ConfigError::new("annotator.confusion", e.to_string())),
            None => Ok(MockConfusion::uniform_noise(classes, self.noise)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub unknown_weights: Vec<f64>,
    pub train: TrainConfig,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            unknown_weights: UNKNOWN_WEIGHT_GRID.to_vec(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub strategy: SelectionStrategy,
    pub embedding: Embedding,
    /// Cluster into this many groups and take medoids of the largest ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_clusters: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: SelectionStrategy::Random,
            embedding: Embedding::Hidden,
            fixed_clusters: None,
        }
    }
}

/// Stochastic block model dataset; block `c` is class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    pub id_classes: Vec<usize>,
    pub graph: SbmSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_budget")]
    pub human_budget: Budget,
    #[serde(default = "default_llm_budget")]
    pub llm_budget: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_detector")]
    pub detector: Detector,
    #[serde(default)]
    pub propagation: Propagation,
    #[serde(default)]
    pub splits: SplitSizes,
    #[serde(default)]
    pub annotator: AnnotatorConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub classifier: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticDataset>,
}

fn default_budget() -> Budget {
    Budget::default()
}

fn default_llm_budget() -> usize {
    200
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_detector() -> Detector {
    Detector::Energy
}

impl ExperimentConfig {
    /// Defaults for `mode` over a bundle directory.
    pub fn new(mode: Mode, dataset: Option<PathBuf>) -> Self {
        Self {
            mode,
            dataset,
            human_budget: default_budget(),
            llm_budget: default_llm_budget(),
            seeds: default_seeds(),
            detector: default_detector(),
            propagation: Propagation::default(),
            splits: SplitSizes::default(),
            annotator: AnnotatorConfig::default(),
            filter: FilterConfig::default(),
            selection: SelectionConfig::default(),
            classifier: TrainConfig::default(),
            synthetic: None,
        }
    }

    /// The six-block SBM fixture (four ID blocks) with splits scaled to 600
    /// nodes and an LLM budget of 100.
    pub fn synthetic_fixture(mode: Mode, graph_seed: u64) -> Self {
        let mut c = Self::new(mode, None);
        c.synthetic = Some(SyntheticDataset {
            id_classes: vec![0, 1, 2, 3],
            graph: SbmSpec::six_blocks(graph_seed),
        });
        c.splits = SplitSizes {
            val_multiple: 10,
            test_id: 100,
            test_ood: 100,
        };
        c.llm_budget = 100;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new(".", e.to_string().trim()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(".", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Cross-field checks that the schema alone cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |p: &str, r: String| Err(ConfigError::new(p, r));
        match (&self.dataset, &self.synthetic) {
            (None, None) => return err(".", "either `dataset` or a [synthetic] section is required".into()),
            (Some(_), Some(_)) => return err("synthetic", "give either `dataset` or [synthetic], not both".into()),
            _ => {}
        }
        if let Some(s) = &self.synthetic {
            if s.graph.feature_dim < s.graph.block_sizes.len() {
                return err("synthetic.graph.feature_dim", "must be at least the number of blocks".into());
            }
            if let Err(e) = ClassSpace::anonymous(s.graph.block_sizes.len(), s.id_classes.clone()) {
                return err("synthetic.id_classes", e.to_string());
            }
            for (name, p) in [("p_in", s.graph.p_in), ("p_out", s.graph.p_out)] {
                if !(0.0..=1.0).contains(&p) {
                    return err(&format!("synthetic.graph.{name}"), format!("must lie in [0, 1], got {p}"));
                }
            }
            if !(s.graph.noise_std >= 0.0 && s.graph.noise_std.is_finite()) {
                return err("synthetic.graph.noise_std", "must be finite and >= 0".into());
            }
        }
        if self.seeds.is_empty() {
            return err("seeds", "at least one seed is required".into());
        }
        if matches!(self.mode, Mode::LlmGood | Mode::LlmGoodCombined) && self.llm_budget == 0 {
            return err("llm_budget", format!("mode {} needs llm_budget > 0", self.mode));
        }
        if self.mode == Mode::LlmGoodF && self.selection.strategy == SelectionStrategy::Uncertainty {
            return err("selection.strategy", "llm_good_f has no filter probabilities for uncertainty selection".into());
        }
        if self.mode == Mode::LlmGoodF
            && self.selection.strategy == SelectionStrategy::Kmedoids
            && self.selection.embedding == Embedding::Hidden
        {
            return err("selection.embedding", "llm_good_f has no filter embeddings; use featprop".into());
        }
        if self.filter.unknown_weights.is_empty() {
            return err("filter.unknown_weights", "at least one weight is required".into());
        }
        if let Some(w) = self.filter.unknown_weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return err("filter.unknown_weights", format!("weights must be positive, got {w}"));
        }
        if !self.filter.train.class_weights.is_empty() {
            return err("filter.train.class_weights", "set by the unknown-weight sweep; leave empty".into());
        }
        if let Err(e) = self.filter.train.validate(2) {
            return err("filter.train", e.to_string());
        }
        if let Err(e) = self.classifier.validate(2) {
            return err("classifier", e.to_string());
        }
        if !self.classifier.class_weights.is_empty() {
            return err("classifier.class_weights", "not supported for the ID classifier".into());
        }
        if !(0.0..=1.0).contains(&self.annotator.noise) {
            return err("annotator.noise", format!("must lie in [0, 1], got {}", self.annotator.noise));
        }
        if self.annotator.kind == AnnotatorKind::Remote {
            if self.annotator.model_name.is_empty() {
                return err("annotator.model_name", "required for remote annotation".into());
            }
            if self.annotator.max_in_flight == 0 {
                return err("annotator.max_in_flight", "must be at least 1".into());
            }
        }
        if !(0.0..=1.0).contains(&self.propagation.alpha) {
            return err("propagation.alpha", format!("must lie in [0, 1], got {}", self.propagation.alpha));
        }
        if self.selection.fixed_clusters == Some(0) {
            return err("selection.fixed_clusters", "must be at least 1".into());
        }
        Ok(())
    }
}
