//! Zero-shot open-world annotation: prompts, reply parsing, the remote chat
//! client with its record/replay cache, and budget-free mock and oracle
//! annotators.

mod cache;
mod client;
mod cost;
mod parse;
mod prompt;

pub use cache::{prompt_hash, AnnotationCache, CacheRecord};
pub use client::{
    complete_with_retry, parse_completion, ChatBackend, ChatError, ChatReply, HttpChatBackend,
    RetryPolicy, API_KEY_ENV,
};
pub use cost::{cost_report, CostBreakdown, ModelPrice, PriceTable};
pub use parse::{parse_response, LabelOutcome};
pub use prompt::{render_prompt, PromptKind, PromptTemplate};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ClassSpace, TagGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotateError {
    #[error("{} node(s) could not be annotated (first: node {}: {})", failures.len(), failures[0].0, failures[0].1)]
    RemoteFailure {
        failures: Vec<(usize, String)>,
        partial: Box<AnnotationSet>,
    },
    #[error("node {0} has no text")]
    MissingText(usize),
    #[error("invalid confusion matrix: {0}")]
    InvalidConfusion(String),
    #[error("annotation cache: {0}")]
    Cache(String),
    #[error("annotation set is empty")]
    EmptySet,
    #[error("no price configured for model `{0}`")]
    UnknownModelPrice(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    Llm,
    Mock,
    Oracle,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Labels in the K+1 alphabet for a set of nodes, keyed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    /// Number of ID classes; label `k` means unknown.
    pub k: usize,
    pub entries: BTreeMap<usize, LabelOutcome>,
    pub source: AnnotationSource,
    pub prompt_kind: Option<PromptKind>,
    pub model_name: String,
    pub token_usage: TokenUsage,
}

impl AnnotationSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.entries.get(&node).map(|o| o.label)
    }

    /// `(node, label)` pairs in node order.
    pub fn labels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().map(|(&v, o)| (v, o.label))
    }

    /// Nodes whose label is an ID class.
    pub fn id_labeled(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels().filter(move |&(_, l)| l < self.k)
    }

    pub fn unparsed_count(&self) -> usize {
        self.entries.values().filter(|o| !o.parsed_cleanly).count()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AnnotateError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| AnnotateError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AnnotateError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnnotateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| AnnotateError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| AnnotateError::Io(format!("{}: {e}", path.display())))
    }
}

/// Fraction of entries labeled unknown.
pub fn predicted_ood_proportion(set: &AnnotationSet) -> Result<f64, AnnotateError> {
    if set.is_empty() {
        return Err(AnnotateError::EmptySet);
    }
    let unknown = set.labels().filter(|&(_, l)| l == set.k).count();
    Ok(unknown as f64 / set.len() as f64)
}

/// Row-stochastic `C × (K+1)` matrix: row = true full class, column =
/// emitted label in the K+1 alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockConfusion {
    rows: Vec<Vec<f64>>,
}

impl MockConfusion {
    pub fn new(rows: Vec<Vec<f64>>, classes: &ClassSpace) -> Result<Self, AnnotateError> {
        let bad = |m: String| Err(AnnotateError::InvalidConfusion(m));
        if rows.len() != classes.num_classes() {
            return bad(format!("{} rows for {} classes", rows.len(), classes.num_classes()));
        }
        for (c, row) in rows.iter().enumerate() {
            if row.len() != classes.k() + 1 {
                return bad(format!("row {c} has {} columns, expected {}", row.len(), classes.k() + 1));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return bad(format!("row {c} has an entry outside [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("row {c} sums to {s}"));
            }
        }
        Ok(Self { rows })
    }

    /// Perfect annotator: ID classes map to themselves, OOD classes to unknown.
    pub fn identity(classes: &ClassSpace) -> Self {
        Self::uniform_noise(classes, 0.0)
    }

    /// With probability `1 - eps` the correct K+1 label, otherwise a label
    /// drawn uniformly from all K+1.
    pub fn uniform_noise(classes: &ClassSpace, eps: f64) -> Self {
        assert!((0.0..=1.0).contains(&eps), "noise must lie in [0, 1]");
        let cols = classes.k() + 1;
        let rows = (0..classes.num_classes())
            .map(|c| {
                let mut row = vec![eps / cols as f64; cols];
                row[classes.open_label(c)] += 1.0 - eps;
                row
            })
            .collect();
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    fn sample<R: Rng>(&self, true_class: usize, rng: &mut R) -> usize {
        let row = &self.rows[true_class];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        // rounding: fall back to the last column with mass
        row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnnotatorSpec {
    RemoteChat {
        endpoint: String,
        model_name: String,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    MockConfusion {
        matrix: MockConfusion,
        seed: u64,
    },
    OracleGroundTruth,
}

fn default_in_flight() -> usize {
    8
}

fn default_timeout() -> u64 {
    60
}

/// Text a perfect annotator would reply for a K+1 label.
fn canonical_reply(label: usize, classes: &ClassSpace) -> String {
    classes
        .id_class_names()
        .get(label)
        .map(|s| s.to_string())
        .unwrap_or_else(|| "none".to_string())
}

/// Annotates `nodes` according to `spec`.
///
/// Remote annotation consults `cache` first, persists every new reply before
/// parsing it and uses `GOOD_API_KEY` for authentication; without a key only
/// cached prompts can be served. On partial failure the error carries the
/// successfully annotated subset.
pub fn annotate(
    nodes: &[usize],
    graph: &TagGraph,
    classes: &ClassSpace,
    spec: &AnnotatorSpec,
    template: &PromptTemplate,
    cache: &AnnotationCache,
) -> Result<AnnotationSet, AnnotateError> {
    match spec {
        AnnotatorSpec::OracleGroundTruth => Ok(annotate_offline(nodes, classes, AnnotationSource::Oracle, |v| {
            classes.open_label(graph.label(v))
        })),
        AnnotatorSpec::MockConfusion { matrix, seed } => {
            if matrix.rows.len() != classes.num_classes() {
                return Err(AnnotateError::InvalidConfusion(format!(
                    "{} rows for {} classes",
                    matrix.rows.len(),
                    classes.num_classes()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok(annotate_offline(nodes, classes, AnnotationSource::Mock, |v| {
                matrix.sample(graph.label(v), &mut rng)
            }))
        }
        AnnotatorSpec::RemoteChat {
            endpoint,
            model_name,
            max_in_flight,
            retry,
            timeout_secs,
        } => {
            let backend = HttpChatBackend::from_env(endpoint, Duration::from_secs(*timeout_secs));
            let remote = RemoteAnnotator {
                model_name,
                max_in_flight: *max_in_flight,
                retry: *retry,
                backend: backend.as_ref().map(|b| b as &dyn ChatBackend),
            };
            remote.annotate(nodes, graph, classes, template, cache)
        }
    }
}

fn annotate_offline(
    nodes: &[usize],
    classes: &ClassSpace,
    source: AnnotationSource,
    mut label_of: impl FnMut(usize) -> usize,
) -> AnnotationSet {
    let entries = nodes
        .iter()
        .map(|&v| {
            let label = label_of(v);
            (
                v,
                LabelOutcome {
                    label,
                    parsed_cleanly: true,
                    raw_response: canonical_reply(label, classes),
                    confidence: None,
                },
            )
        })
        .collect();
    AnnotationSet {
        k: classes.k(),
        entries,
        source,
        prompt_kind: None,
        model_name: match source {
            AnnotationSource::Oracle => "oracle".into(),
            _ => "mock".into(),
        },
        token_usage: TokenUsage::default(),
    }
}

/// Remote chat annotation over an arbitrary backend; `backend: None` serves
/// cache hits only.
pub struct RemoteAnnotator<'a> {
    pub model_name: &'a str,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub backend: Option<&'a dyn ChatBackend>,
}

impl RemoteAnnotator<'_> {
    pub fn annotate(
        &self,
        nodes: &[usize],
        graph: &TagGraph,
        classes: &ClassSpace,
        template: &PromptTemplate,
        cache: &AnnotationCache,
    ) -> Result<AnnotationSet, AnnotateError> {
        let mut jobs = Vec::with_capacity(nodes.len());
        for &v in nodes {
            let text = graph.text(v).ok_or(AnnotateError::MissingText(v))?;
            let prompt = render_prompt(template, classes, text);
            let hash = prompt_hash(self.model_name, template.kind, &prompt);
            jobs.push((v, prompt, hash));
        }

        let misses: Vec<usize> = (0..jobs.len()).filter(|&i| cache.get(&jobs[i].2).is_none()).collect();
        let failures: Mutex<Vec<(usize, String)>> = Mutex::new(Vec::new());
        match self.backend {
            None => {
                failures.lock().expect("lock").extend(misses.iter().map(|&i| {
                    (jobs[i].0, format!("cache miss and {API_KEY_ENV} is not set"))
                }));
            }
            Some(backend) if !misses.is_empty() => {
                let next = AtomicUsize::new(0);
                let workers = self.max_in_flight.clamp(1, misses.len());
                std::thread::scope(|s| {
                    for _ in 0..workers {
                        s.spawn(|| loop {
                            let slot = next.fetch_add(1, Ordering::SeqCst);
                            let Some(&i) = misses.get(slot) else { break };
                            let (node, prompt, hash) = &jobs[i];
                            let result = complete_with_retry(backend, self.model_name, prompt, &self.retry)
                                .map_err(|e| e.message)
                                .and_then(|reply| {
                                    cache
                                        .insert(CacheRecord {
                                            node_id: *node,
                                            prompt_hash: hash.clone(),
                                            model_name: self.model_name.to_string(),
                                            raw_response: reply.content,
                                            prompt_tokens: reply.prompt_tokens,
                                            completion_tokens: reply.completion_tokens,
                                            timestamp: unix_now(),
                                        })
                                        .map_err(|e| e.to_string())
                                });
                            if let Err(msg) = result {
                                failures.lock().expect("lock").push((*node, msg));
                            }
                        });
                    }
                });
            }
            Some(_) => {}
        }

        let mut set = AnnotationSet {
            k: classes.k(),
            entries: BTreeMap::new(),
            source: AnnotationSource::Llm,
            prompt_kind: Some(template.kind),
            model_name: self.model_name.to_string(),
            token_usage: TokenUsage::default(),
        };
        for (v, _, hash) in &jobs {
            if let Some(rec) = cache.get(hash) {
                set.token_usage.prompt_tokens += rec.prompt_tokens;
                set.token_usage.completion_tokens += rec.completion_tokens;
                set.entries.insert(*v, parse_response(&rec.raw_response, classes));
            }
        }
        let mut failures = failures.into_inner().expect("lock");
        if failures.is_empty() {
            Ok(set)
        } else {
            failures.sort();
            Err(AnnotateError::RemoteFailure {
                failures,
                partial: Box::new(set),
            })
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
