use serde::{Deserialize, Serialize};

use crate::graph::ClassSpace;

/// One annotation in the K+1 alphabet (`K` = unknown).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub label: usize,
    pub parsed_cleanly: bool,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Lowercase, `_` treated as a space, surrounding quotes/punctuation and
/// whitespace stripped.
fn normalize(s: &str) -> String {
    s.to_lowercase()
        .replace('_', " ")
        .trim_matches(|c: char| c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '.' | '*' | ':' | '(' | ')' | ',' | ';'))
        .to_string()
}

/// Splits off a trailing `confidence: x` (any case, optional separators)
/// when `x` parses as a number in [0, 1].
fn split_confidence(raw: &str) -> (&str, Option<f64>) {
    let lower = raw.to_ascii_lowercase();
    let Some(pos) = lower.rfind("confidence") else {
        return (raw, None);
    };
    let tail = &raw[pos + "confidence".len()..];
    let tail = tail.trim_start_matches(|c: char| {
        c.is_whitespace() || matches!(c, ':' | '=' | '*' | '-' | '"') || c.is_alphabetic()
    });
    let num: String = tail
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    let rest = &tail[num.len()..];
    let trailing_ok = rest
        .trim()
        .trim_matches(|c: char| matches!(c, '.' | '*' | '"' | ')' | '%'))
        .is_empty();
    match num.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) && trailing_ok => (&raw[..pos], Some(v)),
        _ => (raw, None),
    }
}

/// Maps a raw model reply onto the K+1 alphabet:
///
/// 1. `none` → unknown
/// 2. exactly an ID class name → that class
/// 3. exactly one ID class name contained in the reply → that class
/// 4. anything else → unknown, flagged as not parsed cleanly
///
/// Matching is case-insensitive and treats `_` like a space.
pub fn parse_response(raw: &str, classes: &ClassSpace) -> LabelOutcome {
    let (body, confidence) = split_confidence(raw);
    let text = normalize(body);
    let names: Vec<String> = classes.id_class_names().iter().map(|n| normalize(n)).collect();
    let outcome = |label, parsed_cleanly| LabelOutcome {
        label,
        parsed_cleanly,
        raw_response: raw.to_string(),
        confidence,
    };

    if text == "none" {
        return outcome(classes.unknown(), true);
    }
    if let Some(k) = names.iter().position(|n| *n == text) {
        return outcome(k, true);
    }
    let mut contained = names.iter().enumerate().filter(|(_, n)| text.contains(n.as_str()));
    match (contained.next(), contained.next()) {
        (Some((k, _)), None) => outcome(k, true),
        _ => outcome(classes.unknown(), false),
    }
}
