//! Structured critiques: the grade scale, the canonical critique text, the
//! critique prompt, and the critic backends (gold-path oracle, degraded
//! oracle, remote model).

mod oracle;
mod parse;
#[cfg(feature = "remote")]
mod remote;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::{DegradedCritic, OracleCritic};
pub use parse::{parse_critique, MissingGrade};
#[cfg(feature = "remote")]
pub use remote::RemoteCritic;

use crate::policy::ChatTurn;
use crate::prompts::{critique_template, env_prompts, fill_template, PromptError};
use crate::trajectory::AgentAction;

/// Five-level grade; derives `Ord` so `Excellent` is the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Grade {
    VeryPoor,
    Poor,
    Neutral,
    Good,
    Excellent,
}

impl Grade {
    pub const ALL: [Grade; 5] = [
        Grade::Excellent,
        Grade::Good,
        Grade::Neutral,
        Grade::Poor,
        Grade::VeryPoor,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Grade::Excellent => "Excellent",
            Grade::Good => "Good",
            Grade::Neutral => "Neutral",
            Grade::Poor => "Poor",
            Grade::VeryPoor => "Very Poor",
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Grade::ALL
            .into_iter()
            .find(|g| g.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown grade {s:?}"))
    }
}

impl Serialize for Grade {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Grade {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub contribution: String,
    pub feasibility: String,
    pub efficiency: String,
    pub grade: Grade,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_revision: Option<String>,
    pub raw: String,
}

impl Critique {
    /// Builds a critique whose `raw` text is the canonical rendering.
    pub fn new(
        contribution: impl Into<String>,
        feasibility: impl Into<String>,
        efficiency: impl Into<String>,
        grade: Grade,
        suggested_revision: Option<String>,
    ) -> Self {
        let mut c = Self {
            contribution: contribution.into(),
            feasibility: feasibility.into(),
            efficiency: efficiency.into(),
            grade,
            suggested_revision,
            raw: String::new(),
        };
        c.raw = c.render();
        c
    }

    /// The five `## ` sections in the order the critique format lists them.
    pub fn render(&self) -> String {
        format!(
            "## Contribution: {}\n\n## Feasibility: {}\n\n## Efficiency: {}\n\n## Overall Grading: {}\n\n## Suggested Revision: {}",
            self.contribution,
            self.feasibility,
            self.efficiency,
            self.grade,
            self.suggested_revision.as_deref().unwrap_or("None"),
        )
    }

    pub fn with_grade(&self, grade: Grade) -> Self {
        Self::new(
            self.contribution.clone(),
            self.feasibility.clone(),
            self.efficiency.clone(),
            grade,
            self.suggested_revision.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CritiqueRequest {
    pub env_id: String,
    /// Rendered interaction history (instruction plus refined steps).
    pub history: String,
    pub candidate: AgentAction,
    /// Present only for expert-mode critiques.
    pub gold_path: Option<Vec<String>>,
    /// Commands executed so far; lets the oracle rebuild the state without
    /// re-parsing the rendered history.
    pub executed: Vec<String>,
    /// Environment-supplied action list, overriding the registered text.
    pub available_actions: Option<Vec<String>>,
}

impl CritiqueRequest {
    /// Copy with the gold path removed, as used for training inputs.
    pub fn without_gold(&self) -> Self {
        Self {
            gold_path: None,
            ..self.clone()
        }
    }
}

/// Renders the critique prompt as a single human turn. The gold-path
/// variant is chosen iff the request carries a gold path.
pub fn render_critique_prompt(req: &CritiqueRequest) -> Result<Vec<ChatTurn>, PromptError> {
    let prompts = env_prompts(&req.env_id)?;
    let available = match &req.available_actions {
        Some(list) if !list.is_empty() => {
            let mut text = String::from("Allowed Action Types:");
            for action in list {
                text.push_str("\n- ");
                text.push_str(action);
            }
            text
        }
        _ => prompts.available_actions.to_string(),
    };
    let gold = req.gold_path.as_ref().map(|p| p.join("\n"));
    let template = critique_template(gold.is_some());
    let mut values = vec![
        ("history", req.history.as_str()),
        ("candidate_action", req.candidate.command.as_str()),
        ("available_actions", available.as_str()),
    ];
    let mut required = vec!["history", "candidate_action"];
    if let Some(g) = &gold {
        values.push(("gold_path", g.as_str()));
        required.push("gold_path");
    }
    let text = fill_template(template, &values, &required)?;
    Ok(vec![ChatTurn::human(text)])
}

#[derive(Debug, Error)]
pub enum CriticError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("oracle critic needs a gold path")]
    NoGoldPath,
    #[error("critique had no grade after {0} attempts")]
    MissingGrade(usize),
    #[error("critic backend unavailable: {0}")]
    BackendUnavailable(String),
}

/// A critic produces one critique per candidate, independently.
pub trait Critic: Send {
    fn critique(&mut self, req: &CritiqueRequest) -> Result<Critique, CriticError>;

    /// True when critiques are produced with gold-path access.
    fn is_expert(&self) -> bool {
        false
    }
}
