use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotateError, AnnotationSet};

/// Price per token, in dollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPrice {
    pub input: f64,
    pub output: f64,
}

/// `prices.json`: model name -> per-token prices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, ModelPrice>);

impl PriceTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnnotateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| AnnotateError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| AnnotateError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub model_name: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub input_cost: f64,
    pub output_cost: f64,
    pub total: f64,
}

pub fn cost_report(set: &AnnotationSet, prices: &PriceTable) -> Result<CostBreakdown, AnnotateError> {
    let price = prices
        .0
        .get(&set.model_name)
        .ok_or_else(|| AnnotateError::UnknownModelPrice(set.model_name.clone()))?;
    let input_cost = set.token_usage.prompt_tokens as f64 * price.input;
    let output_cost = set.token_usage.completion_tokens as f64 * price.output;
    Ok(CostBreakdown {
        model_name: set.model_name.clone(),
        prompt_tokens: set.token_usage.prompt_tokens,
        completion_tokens: set.token_usage.completion_tokens,
        input_cost,
        output_cost,
        total: input_cost + output_cost,
    })
}
