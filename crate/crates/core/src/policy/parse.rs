use thiserror::Error;

use crate::trajectory::AgentAction;

/// Output without a usable `Action:` marker. The whole text is kept as the
/// command so the caller can still execute (and log) it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no Action: marker in model output")]
pub struct NoActionMarker {
    pub action: AgentAction,
}

const ACTION: &str = "action:";
const THOUGHT: &str = "thought:";

/// Splits `Thought: ... Action: ...` model output.
///
/// The last `Action:` at the start of a line wins; failing that, the last
/// inline occurrence. The command is the first line after the marker,
/// trimmed of whitespace and surrounding quotes.
pub fn parse_thought_action(raw: &str) -> Result<AgentAction, NoActionMarker> {
    let lower = raw.to_ascii_lowercase();
    let marker = last_line_start_marker(&lower, ACTION).or_else(|| lower.rfind(ACTION));

    let fallback = || NoActionMarker {
        action: AgentAction {
            thought: String::new(),
            command: raw.trim().to_string(),
            raw: raw.to_string(),
        },
    };

    let Some(pos) = marker else {
        return Err(fallback());
    };
    let rest = &raw[pos + ACTION.len()..];
    let line = rest.trim_start().lines().next().unwrap_or("");
    let command = strip_quotes(line.trim()).to_string();
    if command.is_empty() {
        return Err(fallback());
    }

    let head = &lower[..pos];
    let thought = match head.find(THOUGHT) {
        Some(t) => raw[t + THOUGHT.len()..pos].trim().to_string(),
        None => String::new(),
    };
    Ok(AgentAction {
        thought,
        command,
        raw: raw.to_string(),
    })
}

fn last_line_start_marker(lower: &str, marker: &str) -> Option<usize> {
    let mut found = None;
    let mut offset = 0;
    for line in lower.split_inclusive('\n') {
        let indent = line.len() - line.trim_start().len();
        if line[indent..].starts_with(marker) {
            found = Some(offset + indent);
        }
        offset += line.len();
    }
    found
}

fn strip_quotes(s: &str) -> &str {
    let mut s = s;
    loop {
        let trimmed = s
            .strip_prefix(['"', '\'', '`'])
            .and_then(|x| x.strip_suffix(['"', '\'', '`']));
        match trimmed {
            Some(t) => s = t.trim(),
            None => return s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thought_and_action() {
        let a = parse_thought_action("Thought: I need wood.\nAction: get log").unwrap();
        assert_eq!(a.thought, "I need wood.");
        assert_eq!(a.command, "get log");
    }

    #[test]
    fn webshop_click() {
        let a = parse_thought_action("Action: click[Buy Now]").unwrap();
        assert_eq!(a.thought, "");
        assert_eq!(a.command, "click[Buy Now]");
    }

    #[test]
    fn no_marker_falls_back() {
        let err = parse_thought_action("let me think…").unwrap_err();
        assert_eq!(err.action.command, "let me think…");
        assert_eq!(err.action.raw, "let me think…");
    }

    #[test]
    fn last_marker_wins_and_line_start_preferred() {
        let raw = "Thought: the Action: could be wrong\nAction: get log\nAction: craft plank using log";
        assert_eq!(parse_thought_action(raw).unwrap().command, "craft plank using log");

        let raw = "Action: get log\nThought: maybe also try action: inventory";
        assert_eq!(parse_thought_action(raw).unwrap().command, "get log");
    }

    #[test]
    fn inline_marker_accepted() {
        let a = parse_thought_action("Thought: ok. Action: inventory").unwrap();
        assert_eq!(a.thought, "ok.");
        assert_eq!(a.command, "inventory");
    }

    #[test]
    fn case_insensitive_and_quotes() {
        let a = parse_thought_action("THOUGHT: hm\n  action: \"get 2 log\"  ").unwrap();
        assert_eq!(a.thought, "hm");
        assert_eq!(a.command, "get 2 log");
    }

    #[test]
    fn empty_command_is_flagged() {
        assert!(parse_thought_action("Thought: x\nAction:   ").is_err());
    }

    proptest! {
        #[test]
        fn compose_round_trip(
            thought in "[a-zA-Z0-9 ,.]{0,40}",
            command in "[a-z0-9][a-z0-9 \\[\\]]{0,30}[a-z0-9\\]]",
        ) {
            let composed = AgentAction::compose(thought.trim(), command.trim());
            let parsed = parse_thought_action(&composed.raw).unwrap();
            prop_assert_eq!(parsed.command, command.trim());
            prop_assert_eq!(parsed.thought, thought.trim());
        }
    }
}
