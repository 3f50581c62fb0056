use std::collections::BTreeMap;

use thiserror::Error;

use super::command::CraftCommand;
use super::recipe::{normalize_item, RecipeGraph};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("target {0} cannot be obtained from the recipe graph")]
    UnsolvableTask(String),
}

/// Get-then-craft plan for `target`: one `get` per required base item (with
/// the total count), then each intermediate crafted bottom-up, the target
/// last.
pub fn oracle_solve(graph: &RecipeGraph, target: &str) -> Result<Vec<String>, OracleError> {
    let target = normalize_item(target);
    if graph.is_base(&target) {
        return Ok(vec![CraftCommand::Get { item: target, count: 1 }.to_string()]);
    }
    if graph.recipes_for(&target).next().is_none() {
        return Err(OracleError::UnsolvableTask(target));
    }

    // Demand propagation from the target downward. Inputs always sit at a
    // strictly lower level, so visiting by descending level accumulates all
    // demand for an item before expanding it.
    let mut need: BTreeMap<String, u64> = BTreeMap::from([(target.clone(), 1)]);
    let mut crafts: BTreeMap<String, u64> = BTreeMap::new();
    let mut craft_order: Vec<(usize, String)> = Vec::new();
    loop {
        let next = need
            .keys()
            .filter(|item| !graph.is_base(item) && !crafts.contains_key(*item))
            .max_by_key(|item| (graph.depth_of(item).unwrap_or(0), std::cmp::Reverse((*item).clone())))
            .cloned();
        let Some(item) = next else { break };
        let recipe = graph
            .recipes_for(&item)
            .next()
            .ok_or_else(|| OracleError::UnsolvableTask(item.clone()))?;
        let batches = need[&item].div_ceil(recipe.output_count as u64);
        crafts.insert(item.clone(), batches);
        craft_order.push((graph.depth_of(&item).unwrap_or(0), item.clone()));
        for input in &recipe.inputs {
            let concrete = if graph.is_tag(&input.item) {
                graph
                    .tagged(&input.item)
                    .next()
                    .cloned()
                    .ok_or_else(|| OracleError::UnsolvableTask(input.item.clone()))?
            } else {
                input.item.clone()
            };
            *need.entry(concrete).or_insert(0) += batches * input.count as u64;
        }
    }

    let mut plan = Vec::new();
    for (item, count) in need.iter().filter(|(i, _)| graph.is_base(i)) {
        plan.push(
            CraftCommand::Get {
                item: item.clone(),
                count: *count as u32,
            }
            .to_string(),
        );
    }
    craft_order.sort();
    for (_, item) in craft_order {
        let recipe = graph.recipes_for(&item).next().expect("checked above");
        let command = CraftCommand::Craft {
            output: recipe.output.clone(),
            count: None,
            inputs: recipe.inputs.iter().map(|i| (i.item.clone(), i.count)).collect(),
        }
        .to_string();
        for _ in 0..crafts[&item] {
            plan.push(command.clone());
        }
    }
    Ok(plan)
}
