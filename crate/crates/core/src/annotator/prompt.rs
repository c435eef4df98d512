use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::ClassSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Short,
    Long,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Short => "short",
            Self::Long => "long",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "short" => Ok(Self::Short),
            "long" => Ok(Self::Long),
            other => Err(format!("unknown prompt kind `{other}`; valid: short, long")),
        }
    }
}

/// Zero-shot open-world annotation prompt. `object_word` names what a node
/// is ("paper" for citation graphs, "article" for Wiki-CS).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub object_word: String,
}

impl PromptTemplate {
    pub fn new(kind: PromptKind, object_word: impl Into<String>) -> Self {
        Self {
            kind,
            object_word: object_word.into(),
        }
    }
}

const SHORT: &str = "\
As a research scientist, your task is to analyze and classify {object} based on their main topics, meanings, background, and methods. Please first read the content of the {object} carefully. Then, identify the {object}'s key focus. Finally, match the content to one of the given categories.

There are the following categories:
{categories}

Given the current possible categories, determine if it belongs to one of them. If so, specify that category; otherwise, say \"none\".

{content}";

const LONG: &str = "\
You are an expert text classification assistant specializing in identifying whether a given {object} belongs to the predefined in-distribution categories or is out-of-distribution (OOD).

A {object} is considered as out-of-distribution (OOD) if it does NOT belong to any of the in-distribution category(ies) listed below.

Your task is, given the content of the {object} below, to determine whether it is an out-of-distribution (OOD) {object}. If it is an OOD {object}, answer \"none\". If it is not an OOD {object}, determine which in-distribution category below it belongs to. Provide a brief explanation of your reasoning and assign a confidence score between 0 and 1 for your justification.

In-distribution Categories:
{categories}

If you are uncertain whether the {object} significantly aligns with any of the in-distribution category(ies), assume that it does NOT align with them, which means it is an out-of-distribution {object}.

The description of the {object} that you need to identify is as follows:
{content}";

/// Renders the prompt for one node. The category list is exactly the ID
/// class names in ID order; `node_text` is inserted verbatim.
pub fn render_prompt(template: &PromptTemplate, classes: &ClassSpace, node_text: &str) -> String {
    let names = classes.id_class_names();
    let (skeleton, categories) = match template.kind {
        PromptKind::Short => (SHORT, format!("[{}]", names.join(", "))),
        PromptKind::Long => (
            LONG,
            names.iter().map(|n| format!("- {n}")).collect::<Vec<_>>().join("\n"),
        ),
    };
    // content last so node text containing placeholders is left untouched
    skeleton
        .replace("{object}", &template.object_word)
        .replace("{categories}", &categories)
        .replace("{content}", node_text)
}
