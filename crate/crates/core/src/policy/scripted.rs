use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Actor, ActorContext, ActorError};
use crate::craft::parse_command;
use crate::trajectory::{normalize_command, AgentAction, CandidateBuffer};

/// Deterministic desk-scale actor. Each candidate is the gold next action
/// with probability `fidelity`, otherwise a uniformly drawn distractor from
/// the environment's command vocabulary.
#[derive(Debug, Clone)]
pub struct ScriptedActor {
    m: usize,
    fidelity: f64,
    dedup: bool,
    rng: ChaCha8Rng,
}

const DEDUP_DRAWS: usize = 20;

impl ScriptedActor {
    pub fn new(m: usize, fidelity: f64, seed: u64) -> Self {
        Self {
            m: m.max(1),
            fidelity: fidelity.clamp(0.0, 1.0),
            dedup: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_dedup(mut self, dedup: bool) -> Self {
        self.dedup = dedup;
        self
    }

    fn draw(&mut self, gold: Option<&str>, vocabulary: &[String]) -> String {
        if let Some(g) = gold {
            if self.rng.random_bool(self.fidelity) {
                return g.to_string();
            }
        }
        let gold_norm = gold.map(normalize_command);
        let distractors: Vec<&String> = vocabulary
            .iter()
            .filter(|c| Some(normalize_command(c)) != gold_norm)
            .collect();
        match distractors.choose(&mut self.rng) {
            Some(c) => (*c).clone(),
            None => gold.unwrap_or("inventory").to_string(),
        }
    }
}

fn scripted_output(command: &str) -> AgentAction {
    AgentAction::compose(&format!("Next I will {command}."), command)
}

impl Actor for ScriptedActor {
    fn sample_candidates(&mut self, ctx: &ActorContext<'_>) -> Result<CandidateBuffer, ActorError> {
        if ctx.prompt.is_empty() {
            return Err(ActorError::EmptyPrompt);
        }
        let gold = ctx
            .instruction
            .gold_path
            .as_ref()
            .and_then(|g| g.get(ctx.step_index))
            .map(String::as_str);
        let mut commands: Vec<String> = Vec::with_capacity(self.m);
        while commands.len() < self.m {
            let mut cmd = self.draw(gold, ctx.vocabulary);
            if self.dedup {
                for _ in 0..DEDUP_DRAWS {
                    if !commands.iter().any(|c| normalize_command(c) == normalize_command(&cmd)) {
                        break;
                    }
                    cmd = self.draw(gold, ctx.vocabulary);
                }
            }
            commands.push(cmd);
        }
        Ok(CandidateBuffer::new(
            commands.iter().map(|c| scripted_output(c)).collect(),
        ))
    }

    /// Highest grade wins (ties to the lowest index) if it is at least Good;
    /// otherwise the best critique's suggested revision when it is a
    /// command; otherwise candidate 0.
    fn refine_action(&mut self, ctx: &ActorContext<'_>, buffer: &CandidateBuffer) -> Result<AgentAction, ActorError> {
        if !buffer.is_criticised() {
            return Err(ActorError::NoCritiques);
        }
        Ok(select_refined(buffer, ctx.vocabulary))
    }
}

pub(crate) fn select_refined(buffer: &CandidateBuffer, vocabulary: &[String]) -> AgentAction {
    use crate::critic::Grade;
    let (best, critique) = buffer
        .critiques
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|(_, c)| c.grade)
        .expect("criticised buffer is nonempty");
    if critique.grade >= Grade::Good {
        return buffer.candidates[best].clone();
    }
    if let Some(rev) = critique.suggested_revision.as_deref() {
        let rev = rev.trim();
        let known = vocabulary
            .iter()
            .any(|v| normalize_command(v) == normalize_command(rev));
        if parse_command(rev).is_ok() || known {
            return AgentAction::compose(&format!("Following the critique, I will {rev}."), rev);
        }
    }
    buffer.candidates[0].clone()
}
