use std::fmt;

use serde::{Deserialize, Serialize};

use super::SelectError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    Human,
    Llm,
}

impl fmt::Display for BudgetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetKind::Human => "human",
            BudgetKind::Llm => "LLM",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEvent {
    pub kind: BudgetKind,
    pub stage: String,
    pub amount: usize,
}

/// Human and LLM annotation budgets. Consumption is all-or-nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub human_total: usize,
    pub human_used: usize,
    pub llm_total: usize,
    pub llm_used: usize,
    pub events: Vec<LedgerEvent>,
}

impl BudgetLedger {
    pub fn new(human_total: usize, llm_total: usize) -> Self {
        Self {
            human_total,
            human_used: 0,
            llm_total,
            llm_used: 0,
            events: Vec::new(),
        }
    }

    pub fn remaining(&self, kind: BudgetKind) -> usize {
        match kind {
            BudgetKind::Human => self.human_total - self.human_used,
            BudgetKind::Llm => self.llm_total - self.llm_used,
        }
    }

    pub fn consume(&mut self, kind: BudgetKind, stage: &str, amount: usize) -> Result<(), SelectError> {
        let remaining = self.remaining(kind);
        if amount > remaining {
            return Err(SelectError::BudgetExhausted {
                kind,
                requested: amount,
                remaining,
            });
        }
        match kind {
            BudgetKind::Human => self.human_used += amount,
            BudgetKind::Llm => self.llm_used += amount,
        }
        self.events.push(LedgerEvent {
            kind,
            stage: stage.to_string(),
            amount,
        });
        Ok(())
    }

    /// Totals respected and the event log sums to the used counters.
    pub fn is_consistent(&self) -> bool {
        let sum = |k: BudgetKind| self.events.iter().filter(|e| e.kind == k).map(|e| e.amount).sum::<usize>();
        self.human_used <= self.human_total
            && self.llm_used <= self.llm_total
            && sum(BudgetKind::Human) == self.human_used
            && sum(BudgetKind::Llm) == self.llm_used
    }
}
