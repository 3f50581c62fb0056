use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::command::{parse_command, CraftCommand};
use super::recipe::{normalize_item, Recipe, RecipeGraph};
use crate::trajectory::Observation;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CraftError {
    #[error("step called on a finished episode")]
    SteppedAfterDone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CraftState {
    pub inventory: BTreeMap<String, u32>,
    pub target: String,
    pub step_count: usize,
    pub done: bool,
    pub success: bool,
    /// Distinct items crafted so far; feeds the progress fraction.
    pub crafted: BTreeSet<String>,
}

impl CraftState {
    pub fn count(&self, item: &str) -> u32 {
        self.inventory.get(item).copied().unwrap_or(0)
    }

    pub fn score(&self) -> f64 {
        if self.success {
            1.0
        } else {
            0.0
        }
    }
}

/// Single-target crafting environment over a shared recipe graph.
#[derive(Debug, Clone)]
pub struct CraftEnv {
    graph: Arc<RecipeGraph>,
    target: String,
    max_steps: usize,
    get_cap: Option<u32>,
}

/// Outcome of applying one command, before step bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Changed(String),
    Unchanged(String),
    Failed(String),
}

impl CraftEnv {
    pub fn new(graph: Arc<RecipeGraph>, target: &str, max_steps: usize) -> Self {
        Self {
            graph,
            target: normalize_item(target),
            max_steps,
            get_cap: None,
        }
    }

    /// Caps how many units a single `get` may fetch.
    pub fn with_get_cap(mut self, cap: u32) -> Self {
        self.get_cap = Some(cap);
        self
    }

    pub fn graph(&self) -> &RecipeGraph {
        &self.graph
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// The seed does not influence the (fully deterministic) dynamics; it is
    /// accepted for interface parity with stochastic environments.
    pub fn reset(&self, _seed: u64) -> (CraftState, Observation) {
        let state = CraftState {
            inventory: BTreeMap::new(),
            target: self.target.clone(),
            step_count: 0,
            done: false,
            success: false,
            crafted: BTreeSet::new(),
        };
        let obs = Observation {
            text: format!("Goal: craft {}.", self.target),
            score: 0.0,
            done: false,
        };
        (state, obs)
    }

    pub fn step(&self, state: &CraftState, command: &str) -> Result<(CraftState, Observation), CraftError> {
        if state.done {
            return Err(CraftError::SteppedAfterDone);
        }
        let mut next = state.clone();
        let message = match self.apply(&mut next, command) {
            Effect::Changed(m) | Effect::Unchanged(m) | Effect::Failed(m) => m,
        };
        next.step_count += 1;
        if next.count(&self.target) > 0 {
            next.success = true;
            next.done = true;
        } else if next.step_count >= self.max_steps {
            next.done = true;
        }
        let obs = Observation {
            text: message,
            score: next.score(),
            done: next.done,
        };
        Ok((next, obs))
    }

    /// Applies the command's inventory effect in place. Failed commands leave
    /// the state untouched.
    pub fn apply(&self, state: &mut CraftState, command: &str) -> Effect {
        let parsed = match parse_command(command) {
            Ok(c) => c,
            Err(_) => return Effect::Failed(format!("Could not execute {}", command.trim())),
        };
        match parsed {
            CraftCommand::Inventory => Effect::Unchanged(render_inventory(&state.inventory)),
            CraftCommand::Get { item, count } => {
                if !self.graph.is_base(&item) {
                    return Effect::Failed(format!("Could not find {item}"));
                }
                if self.get_cap.is_some_and(|cap| count > cap) {
                    return Effect::Failed(format!(
                        "Could not get {count} {item}; at most {} at a time",
                        self.get_cap.unwrap_or_default()
                    ));
                }
                *state.inventory.entry(item.clone()).or_insert(0) += count;
                Effect::Changed(format!("Got {count} {item}"))
            }
            CraftCommand::Craft { output, inputs, .. } => {
                let mut recipes = self.graph.recipes_for(&output).peekable();
                if recipes.peek().is_none() {
                    return Effect::Failed(format!("Could not find a valid recipe for {output}"));
                }
                let mut matched_any = false;
                for recipe in recipes {
                    let Some(pairs) = match_ingredients(&self.graph, recipe, &inputs) else {
                        continue;
                    };
                    matched_any = true;
                    if let Some(consumed) = plan_consumption(&self.graph, &state.inventory, &pairs) {
                        for (item, n) in consumed {
                            let slot = state.inventory.get_mut(&item).expect("planned from inventory");
                            *slot -= n;
                            if *slot == 0 {
                                state.inventory.remove(&item);
                            }
                        }
                        *state.inventory.entry(recipe.output.clone()).or_insert(0) += recipe.output_count;
                        state.crafted.insert(recipe.output.clone());
                        return Effect::Changed(format!("Crafted {} {}", recipe.output_count, recipe.output));
                    }
                }
                if matched_any {
                    Effect::Failed(format!("Could not find enough items to craft {output}"))
                } else {
                    Effect::Failed(format!(
                        "Could not find a valid recipe for {output} with the given ingredients"
                    ))
                }
            }
        }
    }

    /// Distinct target ancestors crafted so far over the total; a reporting
    /// aid only, never part of the reward.
    pub fn progress_fraction(&self, state: &CraftState) -> f64 {
        let ancestors = self.graph.craftable_ancestors(&self.target);
        if ancestors.is_empty() {
            return if state.success { 1.0 } else { 0.0 };
        }
        let hit = ancestors.iter().filter(|a| state.crafted.contains(*a)).count();
        hit as f64 / ancestors.len() as f64
    }

    /// Every syntactically valid command naming items of this graph, sorted:
    /// `inventory`, one `get` per item and one `craft` per recipe.
    pub fn command_vocabulary(&self) -> Vec<String> {
        let mut out = BTreeSet::new();
        out.insert("inventory".to_string());
        for item in self.graph.items() {
            out.insert(format!("get {item}"));
        }
        for recipe in self.graph.recipes() {
            out.insert(recipe_command(recipe));
        }
        out.into_iter().collect()
    }
}

/// Canonical single-batch craft command for a recipe.
pub fn recipe_command(recipe: &Recipe) -> String {
    CraftCommand::Craft {
        output: recipe.output.clone(),
        count: None,
        inputs: recipe.inputs.iter().map(|i| (i.item.clone(), i.count)).collect(),
    }
    .to_string()
}

pub fn render_inventory(inventory: &BTreeMap<String, u32>) -> String {
    if inventory.is_empty() {
        return "Inventory: You are not carrying anything.".to_string();
    }
    let items = inventory
        .iter()
        .map(|(item, n)| format!("[{item}] ({n})"))
        .collect::<Vec<_>>()
        .join(" ");
    format!("Inventory: {items}")
}

/// Pairs each recipe ingredient with a command ingredient of equal count
/// whose name is the ingredient itself or (for tags) an item carrying it.
fn match_ingredients<'a>(
    graph: &RecipeGraph,
    recipe: &'a Recipe,
    given: &'a [(String, u32)],
) -> Option<Vec<(&'a str, &'a str, u32)>> {
    if given.len() != recipe.inputs.len() {
        return None;
    }
    let mut used = vec![false; given.len()];
    let mut pairs = Vec::with_capacity(given.len());
    for want in &recipe.inputs {
        let idx = given
            .iter()
            .enumerate()
            .position(|(i, (name, count))| !used[i] && *count == want.count && graph.satisfies(name, &want.item))?;
        used[idx] = true;
        pairs.push((want.item.as_str(), given[idx].0.as_str(), want.count));
    }
    Some(pairs)
}

/// Which inventory items to consume, or `None` when short. A command naming
/// a tag draws from tagged items in sorted order.
fn plan_consumption(
    graph: &RecipeGraph,
    inventory: &BTreeMap<String, u32>,
    pairs: &[(&str, &str, u32)],
) -> Option<Vec<(String, u32)>> {
    let mut remaining = inventory.clone();
    let mut consumed = Vec::new();
    for &(_, named, count) in pairs {
        let mut need = count;
        let candidates: Vec<String> = if graph.is_tag(named) {
            graph.tagged(named).cloned().collect()
        } else {
            vec![named.to_string()]
        };
        for item in candidates {
            if need == 0 {
                break;
            }
            let have = remaining.get(&item).copied().unwrap_or(0);
            let take = have.min(need);
            if take > 0 {
                *remaining.get_mut(&item)? -= take;
                consumed.push((item, take));
                need -= take;
            }
        }
        if need > 0 {
            return None;
        }
    }
    Some(consumed)
}
