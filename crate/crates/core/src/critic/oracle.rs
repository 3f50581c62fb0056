use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Critic, CriticError, Critique, CritiqueRequest, Grade};
use crate::craft::{parse_command, CraftCommand, CraftEnv, CraftState, Effect, RecipeGraph};
use crate::trajectory::normalize_command;

/// Deterministic gold-path critic for crafting tasks.
///
/// Rubric against the gold next action `g = gold_path[n]`, `n` being the
/// number of executed steps:
///
/// | grade     | condition                                                     |
/// |-----------|---------------------------------------------------------------|
/// | Excellent | candidate equals `g` after normalization                      |
/// | Poor      | unparsable, names unknown items, or fails to execute          |
/// | Good      | executes and leaves the same inventory `g` would              |
/// | VeryPoor  | consumes items the rest of the gold path still needs          |
/// | Neutral   | acquires an item the rest of the gold path still lacks        |
/// | VeryPoor  | anything else (repeats, inventory checks, detours)            |
///
/// Every grade below Excellent suggests `g` verbatim.
#[derive(Debug, Clone)]
pub struct OracleCritic {
    env: CraftEnv,
}

impl OracleCritic {
    pub fn new(graph: Arc<RecipeGraph>, target: &str) -> Self {
        Self {
            env: CraftEnv::new(graph, target, usize::MAX),
        }
    }

    fn state_after(&self, executed: &[String]) -> CraftState {
        let (mut state, _) = self.env.reset(0);
        for cmd in executed {
            self.env.apply(&mut state, cmd);
        }
        state
    }

    pub fn grade(&self, req: &CritiqueRequest) -> Result<Critique, CriticError> {
        let gold = req.gold_path.as_ref().ok_or(CriticError::NoGoldPath)?;
        let n = req.executed.len();
        let candidate = req.candidate.command.trim();
        let Some(next) = gold.get(n) else {
            return Ok(Critique::new(
                "The task should already be complete; no further action contributes to it.",
                "No further action is required at this point.",
                "Any additional action is a wasted step.",
                Grade::VeryPoor,
                None,
            ));
        };
        let revision = Some(next.clone());
        let target = self.env.target();

        if normalize_command(candidate) == normalize_command(next) {
            return Ok(Critique::new(
                format!("The action is exactly the step needed now to make progress toward crafting {target}."),
                "The action is valid: it follows the allowed command grammar and can be executed with the current inventory.",
                "The action is optimal and introduces no unnecessary steps.",
                Grade::Excellent,
                None,
            ));
        }

        let poor = |feasibility: String| {
            Critique::new(
                "The action cannot contribute to the task because it cannot be executed.",
                feasibility,
                "Executing it would waste a step.",
                Grade::Poor,
                revision.clone(),
            )
        };

        let parsed = match parse_command(candidate) {
            Ok(p) => p,
            Err(_) => {
                return Ok(poor(
                    "The action is not an allowed action type; valid commands are get, inventory and craft.".into(),
                ))
            }
        };
        let unknown: Vec<&str> = mentioned_items(&parsed)
            .into_iter()
            .filter(|i| !self.env.graph().is_known(i))
            .collect();
        if !unknown.is_empty() {
            return Ok(poor(format!(
                "The action references unknown item(s): {}.",
                unknown.join(", ")
            )));
        }

        let state = self.state_after(&req.executed);
        let mut after = state.clone();
        if let Effect::Failed(msg) = self.env.apply(&mut after, candidate) {
            return Ok(poor(format!("The action fails in the current state: {msg}.")));
        }
        let mut after_gold = state.clone();
        self.env.apply(&mut after_gold, next);
        if after.inventory == after_gold.inventory {
            return Ok(Critique::new(
                "The action has the same effect as the step needed now.",
                "The action is valid and executable.",
                "The action is efficient, although it is phrased differently from the expected command.",
                Grade::Good,
                revision,
            ));
        }

        let demand = remaining_demand(self.env.graph(), &gold[n..]);
        let short = |inv: &BTreeMap<String, u32>, item: &str| {
            let graph = self.env.graph();
            let have: u32 = inv
                .iter()
                .filter(|(held, _)| graph.satisfies(held, item))
                .map(|(_, n)| *n)
                .sum();
            demand.get(item).copied().unwrap_or(0) > have
        };
        let needs = |inv: &BTreeMap<String, u32>, item: &str| {
            let graph = self.env.graph();
            let mut keys = vec![item.to_string()];
            keys.extend(graph.tags().get(item).into_iter().flatten().cloned());
            keys.iter().any(|k| short(inv, k))
        };

        if let CraftCommand::Craft { output, .. } = &parsed {
            // out-of-order steps from later in the gold path only rearrange it
            let later_step = gold[n + 1..]
                .iter()
                .any(|g| normalize_command(g) == normalize_command(candidate));
            if !later_step {
                let consumed: Vec<&String> = state
                    .inventory
                    .iter()
                    .filter(|(item, count)| after.count(item) < **count)
                    .map(|(item, _)| item)
                    .collect();
                if let Some(item) = consumed.into_iter().find(|i| needs(&after.inventory, i)) {
                    return Ok(Critique::new(
                        format!("The action consumes {item}, which later steps still need."),
                        "The action is valid but counterproductive.",
                        "The action forces extra steps to recover the consumed items.",
                        Grade::VeryPoor,
                        revision,
                    ));
                }
            }
            if needs(&state.inventory, output) {
                return Ok(neutral(output, revision));
            }
        }
        if let CraftCommand::Get { item, .. } = &parsed {
            if needs(&state.inventory, item) {
                return Ok(neutral(item, revision));
            }
        }

        let repeat = gold[..n]
            .iter()
            .any(|g| normalize_command(g) == normalize_command(candidate));
        let contribution = if repeat {
            "The action repeats a step that was already completed."
        } else {
            "The action does not advance the task."
        };
        Ok(Critique::new(
            contribution,
            "The action is valid but does not help.",
            "The action adds a redundant step.",
            Grade::VeryPoor,
            revision,
        ))
    }
}

fn neutral(item: &str, revision: Option<String>) -> Critique {
    Critique::new(
        format!("The action acquires {item}, which is still needed later, but it is not the step needed now."),
        "The action is valid and executable.",
        "The action is out of order; the required next step is still outstanding.",
        Grade::Neutral,
        revision,
    )
}

fn mentioned_items(cmd: &CraftCommand) -> Vec<&str> {
    match cmd {
        CraftCommand::Inventory => vec![],
        CraftCommand::Get { item, .. } => vec![item.as_str()],
        CraftCommand::Craft { output, inputs, .. } => std::iter::once(output.as_str())
            .chain(inputs.iter().map(|(i, _)| i.as_str()))
            .collect(),
    }
}

/// Multiset of ingredient names (items or tags) consumed by the craft steps
/// of `steps`.
fn remaining_demand(graph: &RecipeGraph, steps: &[String]) -> BTreeMap<String, u32> {
    let mut demand = BTreeMap::new();
    for step in steps {
        if let Ok(CraftCommand::Craft { output, inputs, .. }) = parse_command(step) {
            if graph.recipes_for(&output).next().is_none() {
                continue;
            }
            for (item, count) in inputs {
                *demand.entry(item).or_insert(0) += count;
            }
        }
    }
    demand
}

impl Critic for OracleCritic {
    fn critique(&mut self, req: &CritiqueRequest) -> Result<Critique, CriticError> {
        self.grade(req)
    }

    fn is_expert(&self) -> bool {
        true
    }
}

/// Wraps a critic and, with probability `q`, replaces the grade by a
/// uniformly drawn level.
pub struct DegradedCritic<C> {
    inner: C,
    q: f64,
    rng: ChaCha8Rng,
}

impl<C: Critic> DegradedCritic<C> {
    pub fn new(inner: C, q: f64, seed: u64) -> Self {
        Self {
            inner,
            q: q.clamp(0.0, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<C: Critic> Critic for DegradedCritic<C> {
    fn critique(&mut self, req: &CritiqueRequest) -> Result<Critique, CriticError> {
        let critique = self.inner.critique(req)?;
        if self.q > 0.0 && self.rng.random_bool(self.q) {
            let grade = Grade::ALL[self.rng.random_range(0..Grade::ALL.len())];
            return Ok(critique.with_grade(grade));
        }
        Ok(critique)
    }

    fn is_expert(&self) -> bool {
        self.inner.is_expert()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craft::{generate_tasks, oracle_solve, Recipe};
    use crate::critic::parse_critique;
    use crate::trajectory::AgentAction;

    /// torch <- stick + coal, stick <- plank, plank <- log
    fn fixture() -> (Arc<RecipeGraph>, Vec<String>) {
        let graph = RecipeGraph::new(
            vec![
                Recipe::new("plank", 1, &[("log", 1)]),
                Recipe::new("stick", 1, &[("plank", 1)]),
                Recipe::new("torch", 1, &[("stick", 1), ("coal", 1)]),
            ],
            ["log".to_string(), "coal".to_string()],
            BTreeMap::new(),
        )
        .unwrap();
        let gold = oracle_solve(&graph, "torch").unwrap();
        (Arc::new(graph), gold)
    }

    fn req(gold: &[String], executed: &[&str], candidate: &str) -> CritiqueRequest {
        CritiqueRequest {
            env_id: "craftsim".into(),
            history: String::new(),
            candidate: AgentAction::compose("", candidate),
            gold_path: Some(gold.to_vec()),
            executed: executed.iter().map(|s| s.to_string()).collect(),
            available_actions: None,
        }
    }

    #[test]
    fn fixture_gold_path() {
        let (_, gold) = fixture();
        assert_eq!(
            gold,
            vec![
                "get coal",
                "get log",
                "craft plank using log",
                "craft stick using plank",
                "craft torch using stick, coal"
            ]
        );
    }

    #[test]
    fn excellent_on_gold() {
        let (g, gold) = fixture();
        let c = OracleCritic::new(g, "torch")
            .grade(&req(&gold, &[], "get coal"))
            .unwrap();
        assert_eq!(c.grade, Grade::Excellent);
        assert_eq!(c.suggested_revision, None);
    }

    #[test]
    fn poor_on_unparsable() {
        let (g, gold) = fixture();
        let c = OracleCritic::new(g, "torch").grade(&req(&gold, &[], "fly up")).unwrap();
        assert_eq!(c.grade, Grade::Poor);
        assert_eq!(c.suggested_revision.as_deref(), Some("get coal"));
        assert!(c.feasibility.contains("not an allowed action type"));
    }

    #[test]
    fn poor_on_unknown_or_failing() {
        let (g, gold) = fixture();
        let critic = OracleCritic::new(g, "torch");
        let c = critic.grade(&req(&gold, &[], "get diamond")).unwrap();
        assert_eq!(c.grade, Grade::Poor);
        assert!(c.feasibility.contains("unknown item(s): diamond"));
        let c = critic.grade(&req(&gold, &[], "get plank")).unwrap();
        assert_eq!(c.grade, Grade::Poor);
        assert!(c.feasibility.contains("Could not find plank"));
    }

    #[test]
    fn neutral_when_prefetching_needed_item() {
        // Need-analysis: remaining gold crafts consume {log:1, plank:1,
        // stick:1, coal:1}; the inventory holds nothing, so log is short and
        // fetching it now (two gold steps before its craft) is Neutral.
        let (g, gold) = fixture();
        let c = OracleCritic::new(g, "torch")
            .grade(&req(&gold, &[], "get log"))
            .unwrap();
        assert_eq!(c.grade, Grade::Neutral);
        assert_eq!(c.suggested_revision.as_deref(), Some("get coal"));
    }

    #[test]
    fn good_when_state_equivalent() {
        let (g, gold) = fixture();
        let c = OracleCritic::new(g, "torch")
            .grade(&req(&gold, &[], "get 1 coal"))
            .unwrap();
        assert_eq!(c.grade, Grade::Good);
    }

    #[test]
    fn very_poor_on_repeat_and_consumption() {
        let (g, gold) = fixture();
        let critic = OracleCritic::new(g, "torch");
        let c = critic.grade(&req(&gold, &["get coal", "get log"], "get coal")).unwrap();
        assert_eq!(c.grade, Grade::VeryPoor);
        assert!(c.contribution.contains("repeats"));
        let c = critic
            .grade(&req(&gold, &["get coal", "get log"], "inventory"))
            .unwrap();
        assert_eq!(c.grade, Grade::VeryPoor);
    }

    #[test]
    fn very_poor_on_harmful_craft() {
        // gold: get 2 log, plank x2 (plank <- log), beam <- log (needs the
        // second log) ... crafting a second plank early eats that log.
        let graph = RecipeGraph::new(
            vec![
                Recipe::new("plank", 1, &[("log", 1)]),
                Recipe::new("beam", 1, &[("log", 1)]),
                Recipe::new("frame", 1, &[("plank", 1), ("beam", 1)]),
            ],
            ["log".to_string()],
            BTreeMap::new(),
        )
        .unwrap();
        let gold = oracle_solve(&graph, "frame").unwrap();
        assert_eq!(
            gold,
            vec![
                "get 2 log",
                "craft beam using log",
                "craft plank using log",
                "craft frame using plank, beam"
            ]
        );
        let critic = OracleCritic::new(Arc::new(graph), "frame");
        let executed = ["get 2 log", "craft beam using log"];
        // plank is a later gold step -> out of order but fine
        let c = critic.grade(&req(&gold, &executed, "craft plank using log")).unwrap();
        assert_eq!(c.grade, Grade::Excellent);
        let c = critic
            .grade(&req(&gold, &executed[..1], "craft plank using log"))
            .unwrap();
        assert_eq!(c.grade, Grade::Neutral);
        let executed = ["get 2 log", "craft beam using log", "craft plank using log"];
        let c = critic
            .grade(&req(&gold, &executed[..2], "craft beam using log"))
            .unwrap();
        assert_eq!(c.grade, Grade::VeryPoor, "{}", c.raw);
    }

    #[test]
    fn exhausted_gold_path() {
        let (g, gold) = fixture();
        let executed: Vec<&str> = gold.iter().map(String::as_str).collect();
        let c = OracleCritic::new(g, "torch")
            .grade(&req(&gold, &executed, "inventory"))
            .unwrap();
        assert_eq!(c.grade, Grade::VeryPoor);
        assert_eq!(c.suggested_revision, None);
    }

    #[test]
    fn needs_gold_path() {
        let (g, gold) = fixture();
        let mut r = req(&gold, &[], "get coal");
        r.gold_path = None;
        assert!(matches!(
            OracleCritic::new(g, "torch").grade(&r),
            Err(CriticError::NoGoldPath)
        ));
    }

    #[test]
    fn critiques_round_trip_through_parser() {
        for task in generate_tasks(2, 2, 10, 4).unwrap() {
            let critic = OracleCritic::new(task.graph.clone(), &task.target);
            let env = task.env(usize::MAX);
            let gold = task.gold_path().to_vec();
            for n in 0..=gold.len() {
                let executed: Vec<&str> = gold[..n].iter().map(String::as_str).collect();
                for cand in env.command_vocabulary() {
                    let c = critic.grade(&req(&gold, &executed, &cand)).unwrap();
                    assert_eq!(parse_critique(&c.raw).unwrap(), c);
                }
            }
        }
    }

    #[test]
    fn degraded_zero_is_identity() {
        let (g, gold) = fixture();
        let r = req(&gold, &[], "get log");
        let base = OracleCritic::new(g.clone(), "torch").grade(&r).unwrap();
        let mut d = DegradedCritic::new(OracleCritic::new(g.clone(), "torch"), 0.0, 1);
        assert_eq!(d.critique(&r).unwrap(), base);
        let mut d = DegradedCritic::new(OracleCritic::new(g, "torch"), 1.0, 1);
        let grades: std::collections::BTreeSet<Grade> = (0..200).map(|_| d.critique(&r).unwrap().grade).collect();
        assert_eq!(grades.len(), 5);
    }
}
