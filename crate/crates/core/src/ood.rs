//! Post-hoc OOD scores over classifier logits. Every detector is oriented so
//! that a higher score means "more likely OOD".

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::gcn::softmax_row;
use crate::graph::NormAdj;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detector {
    Msp,
    Entropy,
    Energy,
    EnergyProp,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Self::Msp, Self::Entropy, Self::Energy, Self::EnergyProp];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Msp => "msp",
            Self::Entropy => "entropy",
            Self::Energy => "energy",
            Self::EnergyProp => "energy_prop",
        }
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Detector {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown detector `{s}`; valid: msp, entropy, energy, energy_prop"))
    }
}

/// Score-propagation parameters: `s <- (1 - alpha) s + alpha Â s`, `steps` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Propagation {
    pub alpha: f64,
    pub steps: usize,
}

impl Default for Propagation {
    fn default() -> Self {
        Self { alpha: 0.5, steps: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodScores {
    pub detector: Detector,
    /// One score per logit row.
    pub scores: Array1<f64>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn per_row(logits: &Array2<f64>, f: impl Fn(ArrayView1<f64>) -> f64) -> Array1<f64> {
    logits.outer_iter().map(f).collect()
}

/// `1 - max softmax`.
pub fn msp_score(logits: &Array2<f64>) -> OodScores {
    OodScores {
        detector: Detector::Msp,
        scores: per_row(logits, |r| 1.0 - softmax_row(r).fold(0.0, |m: f64, &p| m.max(p))),
    }
}

/// Shannon entropy of the softmax distribution (nats), with `0 ln 0 = 0`.
pub fn entropy_score(logits: &Array2<f64>) -> OodScores {
    OodScores {
        detector: Detector::Entropy,
        scores: per_row(logits, |r| shannon_entropy(softmax_row(r).view())),
    }
}

pub fn shannon_entropy(probs: ArrayView1<f64>) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `-T logsumexp(z / T)`.
pub fn energy_score(logits: &Array2<f64>, temperature: f64) -> OodScores {
    assert!(temperature > 0.0, "temperature must be positive");
    OodScores {
        detector: Detector::Energy,
        scores: per_row(logits, |r| -temperature * logsumexp(r.mapv(|v| v / temperature).view())),
    }
}

pub fn logsumexp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn propagate_scores(scores: &OodScores, adj: &NormAdj, prop: Propagation) -> OodScores {
    assert!((0.0..=1.0).contains(&prop.alpha), "alpha must lie in [0, 1]");
    let mut s = scores.scores.clone();
    for _ in 0..prop.steps {
        let neighbor = adj.matvec(&s);
        s = s * (1.0 - prop.alpha) + neighbor * prop.alpha;
    }
    OodScores {
        detector: scores.detector,
        scores: s,
    }
}

/// Scores every logit row with the given detector; `energy_prop` is energy
/// followed by [`propagate_scores`].
pub fn score(detector: Detector, logits: &Array2<f64>, adj: &NormAdj, prop: Propagation) -> OodScores {
    match detector {
        Detector::Msp => msp_score(logits),
        Detector::Entropy => entropy_score(logits),
        Detector::Energy => energy_score(logits, 1.0),
        Detector::EnergyProp => OodScores {
            detector: Detector::EnergyProp,
            ..propagate_scores(&energy_score(logits, 1.0), adj, prop)
        },
    }
}
