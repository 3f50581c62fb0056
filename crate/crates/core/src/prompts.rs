//! Prompt assets keyed by environment id, and placeholder filling.

use thiserror::Error;

use crate::trajectory::CandidateBuffer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no prompt registered for environment {0:?}")]
    UnknownEnvPrompt(String),
    #[error("template lacks placeholder {{{0}}}")]
    MissingPlaceholder(String),
}

const ACTOR_TEXTCRAFT: &str = include_str!("../assets/actor_textcraft.txt");
const ACTOR_WEBSHOP: &str = include_str!("../assets/actor_webshop.txt");
const ACTOR_SCIWORLD: &str = include_str!("../assets/actor_sciworld.txt");
const ACTIONS_CRAFTSIM: &str = include_str!("../assets/actions_craftsim.txt");
const ACTIONS_WEBSHOP: &str = include_str!("../assets/actions_webshop.txt");
const ACTIONS_SCIWORLD: &str = include_str!("../assets/actions_sciworld.txt");
const CRITIQUE_PLAIN: &str = include_str!("../assets/critique_plain.txt");
const CRITIQUE_GOLD: &str = include_str!("../assets/critique_gold.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvPrompts {
    pub env_id: &'static str,
    pub actor_system: &'static str,
    pub available_actions: &'static str,
}

pub fn env_prompts(env_id: &str) -> Result<EnvPrompts, PromptError> {
    let (id, actor, actions) = match env_id.to_ascii_lowercase().as_str() {
        "craftsim" | "textcraft" => ("craftsim", ACTOR_TEXTCRAFT, ACTIONS_CRAFTSIM),
        "webshop" => ("webshop", ACTOR_WEBSHOP, ACTIONS_WEBSHOP),
        "sciworld" | "scienceworld" => ("sciworld", ACTOR_SCIWORLD, ACTIONS_SCIWORLD),
        _ => return Err(PromptError::UnknownEnvPrompt(env_id.to_string())),
    };
    Ok(EnvPrompts {
        env_id: id,
        actor_system: actor.trim_end_matches('\n'),
        available_actions: actions.trim_end_matches('\n'),
    })
}

pub fn critique_template(with_gold_path: bool) -> &'static str {
    if with_gold_path {
        CRITIQUE_GOLD.trim_end_matches('\n')
    } else {
        CRITIQUE_PLAIN.trim_end_matches('\n')
    }
}

/// Substitutes `{key}` placeholders in one pass; inserted values are never
/// rescanned. Every `required` key must occur in the template.
pub fn fill_template(template: &str, values: &[(&str, &str)], required: &[&str]) -> Result<String, PromptError> {
    for key in required {
        if !template.contains(&format!("{{{key}}}")) {
            return Err(PromptError::MissingPlaceholder(key.to_string()));
        }
    }
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let key = &after[..close];
            values.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub const REFINE_INSTRUCTION: &str = "Based on the critiques above, choose your final next action. Your response should use the following format:\n\nThought: ...\nAction: ...";

/// The human turn listing every candidate with its critique, followed by
/// the refine instruction. Shared by the remote actor and the refine
/// dataset so training inputs match inference inputs.
pub fn render_refine_turn(buffer: &CandidateBuffer) -> String {
    let mut out = String::from("Candidate actions and their critiques:\n");
    for (i, (cand, critique)) in buffer.candidates.iter().zip(&buffer.critiques).enumerate() {
        out.push_str(&format!("\n### Candidate {}: {}\n", i + 1, cand.command));
        out.push_str(&critique.raw);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(REFINE_INSTRUCTION);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry() {
        let p = env_prompts("craftsim").unwrap();
        assert!(p
            .actor_system
            .starts_with("You are given a few useful crafting recipes"));
        assert!(p.actor_system.ends_with("Thought: ...\nAction: ..."));
        assert_eq!(env_prompts("TextCraft").unwrap(), p);
        assert!(env_prompts("webshop")
            .unwrap()
            .actor_system
            .contains("click[something] or search[something]"));
        assert!(env_prompts("sciworld")
            .unwrap()
            .available_actions
            .contains("- focus on OBJ"));
        assert_eq!(
            env_prompts("alfworld"),
            Err(PromptError::UnknownEnvPrompt("alfworld".into()))
        );
    }

    #[test]
    fn fill_is_single_pass() {
        let out = fill_template("a {x} b {y} {z}", &[("x", "{y}"), ("y", "Y")], &["x"]).unwrap();
        assert_eq!(out, "a {y} b Y {z}");
        assert_eq!(
            fill_template("no keys", &[], &["history"]),
            Err(PromptError::MissingPlaceholder("history".into()))
        );
    }

    #[test]
    fn templates_carry_placeholders() {
        for gold in [false, true] {
            let t = critique_template(gold);
            for key in ["history", "candidate_action", "available_actions"] {
                assert!(t.contains(&format!("{{{key}}}")));
            }
            assert_eq!(t.contains("{gold_path}"), gold);
            assert_eq!(t.contains("Referenced Gold Path for Current Task"), gold);
        }
    }
}
