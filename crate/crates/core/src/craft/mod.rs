//! Deterministic TextCraft-style crafting environment, task generator and
//! oracle solver.

mod command;
mod env;
mod generate;
mod oracle;
mod recipe;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use command::{parse_command, CraftCommand, UnparsableCommand};
pub use env::{recipe_command, render_inventory, CraftEnv, CraftError, CraftState, Effect};
pub use generate::{generate_tasks, instruction_text, GenerateError, CRAFT_ENV_ID};
pub use oracle::{oracle_solve, OracleError};
pub use recipe::{normalize_item, GraphError, Ingredient, Recipe, RecipeGraph};

use crate::trajectory::Instruction;

/// Default step budget: four times the gold path, at least ten.
pub fn default_max_steps(oracle_length: usize) -> usize {
    (4 * oracle_length).max(10)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CraftTask {
    pub instruction: Instruction,
    pub target: String,
    pub graph: Arc<RecipeGraph>,
    /// Longest recipe chain from base items to the target.
    pub depth: usize,
}

impl CraftTask {
    pub fn gold_path(&self) -> &[String] {
        self.instruction.gold_path.as_deref().unwrap_or(&[])
    }

    pub fn env(&self, max_steps: usize) -> CraftEnv {
        CraftEnv::new(self.graph.clone(), &self.target, max_steps)
    }
}

#[derive(Debug, Error)]
pub enum TaskSetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("task set json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("task {task_id}: {reason}")]
    Invalid { task_id: String, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskRecord {
    task_id: String,
    target: String,
    recipes: Vec<Recipe>,
    base_items: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    tags: BTreeMap<String, BTreeSet<String>>,
    gold_path: Vec<String>,
    depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instruction: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskSetFile {
    tasks: Vec<TaskRecord>,
}

/// Serializes tasks into the task set JSON document.
pub fn task_set_json(tasks: &[CraftTask]) -> String {
    let file = TaskSetFile {
        tasks: tasks
            .iter()
            .map(|t| TaskRecord {
                task_id: t.instruction.task_id.clone(),
                target: t.target.clone(),
                recipes: t.graph.recipes().to_vec(),
                base_items: t.graph.base_items().iter().cloned().collect(),
                tags: t.graph.tags().clone(),
                gold_path: t.gold_path().to_vec(),
                depth: t.depth,
                instruction: Some(t.instruction.text.clone()),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file).expect("task set serializes");
    out.push('\n');
    out
}

pub fn parse_task_set(json: &str) -> Result<Vec<CraftTask>, TaskSetError> {
    let file: TaskSetFile = serde_json::from_str(json)?;
    let mut seen = BTreeSet::new();
    file.tasks
        .into_iter()
        .map(|rec| {
            let invalid = |reason: String| TaskSetError::Invalid {
                task_id: rec.task_id.clone(),
                reason,
            };
            if !seen.insert(rec.task_id.clone()) {
                return Err(invalid("duplicate task_id".into()));
            }
            let graph = RecipeGraph::new(rec.recipes.clone(), rec.base_items.clone(), rec.tags.clone())
                .map_err(|e| invalid(e.to_string()))?;
            let target = normalize_item(&rec.target);
            if !graph.is_known(&target) {
                return Err(invalid(format!("unknown target {target}")));
            }
            let text = rec
                .instruction
                .clone()
                .unwrap_or_else(|| instruction_text(graph.recipes(), &target));
            let instruction = Instruction::new(&rec.task_id, CRAFT_ENV_ID, text)
                .map_err(|e| invalid(e.to_string()))?
                .with_gold_path(rec.gold_path.clone());
            Ok(CraftTask {
                instruction,
                target,
                graph: Arc::new(graph),
                depth: rec.depth,
            })
        })
        .collect()
}

pub fn read_task_set(path: &Path) -> Result<Vec<CraftTask>, TaskSetError> {
    parse_task_set(&std::fs::read_to_string(path)?)
}

pub fn write_task_set(path: &Path, tasks: &[CraftTask]) -> Result<(), TaskSetError> {
    std::fs::write(path, task_set_json(tasks))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_set_round_trip() {
        let tasks = generate_tasks(2, 2, 4, 3).unwrap();
        let json = task_set_json(&tasks);
        let back = parse_task_set(&json).unwrap();
        assert_eq!(back, tasks);
        assert_eq!(task_set_json(&back), json);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let first = &value["tasks"][0];
        for key in ["task_id", "target", "recipes", "base_items", "gold_path", "depth"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let tasks = generate_tasks(1, 1, 1, 3).unwrap();
        let dup = vec![tasks[0].clone(), tasks[0].clone()];
        assert!(matches!(
            parse_task_set(&task_set_json(&dup)),
            Err(TaskSetError::Invalid { .. })
        ));
    }

    #[test]
    fn max_steps_default() {
        assert_eq!(default_max_steps(1), 10);
        assert_eq!(default_max_steps(4), 16);
    }
}
