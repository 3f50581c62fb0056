use std::fmt;

use thiserror::Error;

use super::recipe::normalize_item;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparsable command: {0}")]
pub struct UnparsableCommand(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CraftCommand {
    Get {
        item: String,
        count: u32,
    },
    Inventory,
    Craft {
        output: String,
        /// Requested output count; informational, the recipe decides yield.
        count: Option<u32>,
        inputs: Vec<(String, u32)>,
    },
}

/// Parses the crafting command grammar:
///
/// ```text
/// get <count?> <item>
/// inventory
/// craft <count?> <output> using <count?> <item> (, <count?> <item>)*
/// ```
pub fn parse_command(text: &str) -> Result<CraftCommand, UnparsableCommand> {
    let err = || UnparsableCommand(text.to_string());
    let norm = normalize_item(text);
    let (keyword, rest) = match norm.split_once(' ') {
        Some((k, r)) => (k, r.trim()),
        None => (norm.as_str(), ""),
    };
    match keyword {
        "inventory" if rest.is_empty() => Ok(CraftCommand::Inventory),
        "get" => {
            let (count, item) = counted(rest).ok_or_else(err)?;
            Ok(CraftCommand::Get { item, count })
        }
        "craft" => {
            let (head, tail) = rest.split_once(" using ").ok_or_else(err)?;
            let (count, output) = counted_opt(head).ok_or_else(err)?;
            let inputs = tail
                .split(',')
                .map(|part| counted(part.trim()).map(|(n, item)| (item, n)))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(err)?;
            Ok(CraftCommand::Craft { output, count, inputs })
        }
        _ => Err(err()),
    }
}

fn counted(s: &str) -> Option<(u32, String)> {
    let (count, item) = counted_opt(s)?;
    Some((count.unwrap_or(1), item))
}

fn counted_opt(s: &str) -> Option<(Option<u32>, String)> {
    let s = s.trim();
    let (count, item) = match s.split_once(' ') {
        Some((n, rest)) if n.chars().all(|c| c.is_ascii_digit()) => {
            let n: u32 = n.parse().ok()?;
            if n == 0 {
                return None;
            }
            (Some(n), rest.trim())
        }
        _ => (None, s),
    };
    if item.is_empty() || item.chars().all(|c| c.is_ascii_digit()) || item.contains(" using ") {
        return None;
    }
    Some((count, item.to_string()))
}

impl fmt::Display for CraftCommand {
    /// Canonical form; counts of 1 are omitted.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn counted(count: u32, item: &str) -> String {
            if count == 1 {
                item.to_string()
            } else {
                format!("{count} {item}")
            }
        }
        match self {
            CraftCommand::Inventory => f.write_str("inventory"),
            CraftCommand::Get { item, count } => write!(f, "get {}", counted(*count, item)),
            CraftCommand::Craft { output, count, inputs } => {
                let head = match count {
                    Some(n) => counted(*n, output),
                    None => output.clone(),
                };
                let inputs = inputs
                    .iter()
                    .map(|(i, c)| counted(*c, i))
                    .collect::<Vec<_>>()
                    .join(", ");
                write!(f, "craft {head} using {inputs}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn craft_with_counts() {
        assert_eq!(
            parse_command("craft 1 stick using 1 plank").unwrap(),
            CraftCommand::Craft {
                output: "stick".into(),
                count: Some(1),
                inputs: vec![("plank".into(), 1)],
            }
        );
    }

    #[test]
    fn inventory_keyword() {
        assert_eq!(parse_command("inventory").unwrap(), CraftCommand::Inventory);
        assert_eq!(parse_command("  INVENTORY ").unwrap(), CraftCommand::Inventory);
    }

    #[test]
    fn rejects_free_text() {
        assert_eq!(
            parse_command("fly to the moon"),
            Err(UnparsableCommand("fly to the moon".into()))
        );
        assert!(parse_command("get").is_err());
        assert!(parse_command("get 0 log").is_err());
        assert!(parse_command("craft stick").is_err());
        assert!(parse_command("craft stick using").is_err());
        assert!(parse_command("inventory now").is_err());
    }

    #[test]
    fn get_defaults_and_case() {
        assert_eq!(
            parse_command("Get  Oak   Log").unwrap(),
            CraftCommand::Get {
                item: "oak log".into(),
                count: 1
            }
        );
        assert_eq!(
            parse_command("get 3 iron ingot").unwrap(),
            CraftCommand::Get {
                item: "iron ingot".into(),
                count: 3
            }
        );
    }

    #[test]
    fn multi_input_craft() {
        let cmd = parse_command("CRAFT 4 Oak Plank Door using 2 oak plank, iron hinge").unwrap();
        assert_eq!(
            cmd,
            CraftCommand::Craft {
                output: "oak plank door".into(),
                count: Some(4),
                inputs: vec![("oak plank".into(), 2), ("iron hinge".into(), 1)],
            }
        );
        assert_eq!(cmd.to_string(), "craft 4 oak plank door using 2 oak plank, iron hinge");
    }

    proptest! {
        #[test]
        fn display_parses_back(
            item in "[a-z]{1,6}( [a-z]{1,6}){0,2}",
            other in "[a-z]{1,6}",
            n in 1u32..5,
            m in 1u32..5,
        ) {
            for cmd in [
                CraftCommand::Get { item: item.clone(), count: n },
                CraftCommand::Craft { output: item.clone(), count: None, inputs: vec![(other.clone(), m), (format!("{other} x"), n)] },
                CraftCommand::Inventory,
            ] {
                prop_assume!(!item.split(' ').any(|w| w == "using") && other != "using");
                prop_assert_eq!(parse_command(&cmd.to_string()).unwrap(), cmd);
            }
        }
    }
}
