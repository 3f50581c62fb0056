//! Actor side: chat turns, the actor prompt, candidate sampling and the
//! refine step, with scripted and remote backends.

#[cfg(feature = "remote")]
mod chat;
mod parse;
#[cfg(feature = "remote")]
mod remote;
mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "remote")]
pub use chat::{ChatClient, ChatError, ConcurrencyLimit, RetryPolicy};
pub use parse::{parse_thought_action, NoActionMarker};
#[cfg(feature = "remote")]
pub use remote::RemoteActor;
pub use scripted::ScriptedActor;

use crate::prompts::{env_prompts, PromptError};
use crate::trajectory::{AgentAction, CandidateBuffer, Instruction, Step};

/// M, the number of candidates sampled per step.
pub const DEFAULT_CANDIDATES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Human,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn human(content: impl Into<String>) -> Self {
        Self {
            role: Role::Human,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// System prompt for the environment, the task as the first human turn,
/// then each executed action (assistant) and its observation (human).
pub fn render_actor_prompt(
    env_id: &str,
    instruction: &Instruction,
    history: &[Step],
) -> Result<Vec<ChatTurn>, PromptError> {
    let prompts = env_prompts(env_id)?;
    let mut turns = Vec::with_capacity(2 + 2 * history.len());
    turns.push(ChatTurn::system(prompts.actor_system));
    turns.push(ChatTurn::human(instruction.text.clone()));
    for step in history {
        turns.push(ChatTurn::assistant(step.refined_action.raw.clone()));
        turns.push(ChatTurn::human(step.observation.text.clone()));
    }
    Ok(turns)
}

#[derive(Debug, Error)]
pub enum ActorError {
    #[error("actor backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("refine requires one critique per candidate")]
    NoCritiques,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Everything an actor may look at when choosing actions for one step.
#[derive(Debug, Clone, Copy)]
pub struct ActorContext<'a> {
    pub prompt: &'a [ChatTurn],
    pub instruction: &'a Instruction,
    /// Number of steps executed so far.
    pub step_index: usize,
    /// Syntactically valid commands in the current environment, used by the
    /// scripted backend to draw distractors.
    pub vocabulary: &'a [String],
}

pub trait Actor: Send {
    /// Samples M candidates; candidate 0 is the no-critique baseline.
    fn sample_candidates(&mut self, ctx: &ActorContext<'_>) -> Result<CandidateBuffer, ActorError>;

    /// Chooses the action to execute given the criticised buffer.
    fn refine_action(&mut self, ctx: &ActorContext<'_>, buffer: &CandidateBuffer) -> Result<AgentAction, ActorError>;
}
