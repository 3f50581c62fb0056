//! Procedural crafting tasks with an exact longest-chain depth.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::oracle::oracle_solve;
use super::recipe::{GraphError, Ingredient, Recipe, RecipeGraph};
use super::CraftTask;
use crate::trajectory::Instruction;

pub const CRAFT_ENV_ID: &str = "craftsim";

const MATERIALS: &[&str] = &[
    "oak",
    "birch",
    "spruce",
    "acacia",
    "iron",
    "gold",
    "copper",
    "stone",
    "diamond",
    "emerald",
    "redstone",
    "quartz",
    "clay",
    "sand",
    "wool",
    "glass",
    "bone",
    "leather",
    "flint",
    "coal",
    "amethyst",
    "lapis",
    "obsidian",
    "prismarine",
    "granite",
    "basalt",
    "cherry",
    "bamboo",
];
const FORMS: &[&str] = &[
    "log", "plank", "slab", "ingot", "nugget", "block", "dust", "shard", "rod", "pane", "brick", "tile", "gear",
    "plate", "bar", "fiber", "wire", "lens", "frame", "hinge", "chain", "button", "lantern", "panel", "lever",
    "hopper", "rail", "banner",
];

const TAG_PROBABILITY: f64 = 0.15;
const REUSE_PROBABILITY: f64 = 0.3;
const MAX_ATTEMPTS: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenerateError {
    #[error("depth and branching must be at least 1")]
    InvalidParameters,
    #[error("could not build a task with depth {depth} and branching {branching} in {attempts} attempts")]
    GenerationOverflow {
        depth: usize,
        branching: usize,
        attempts: usize,
    },
    #[error("generated graph invalid: {0}")]
    Graph(#[from] GraphError),
}

/// Generates `count` tasks deterministically from `seed`. Each task's
/// target sits exactly `depth` recipes above the base items; recipes take
/// between 1 and `branching` ingredients.
pub fn generate_tasks(
    depth: usize,
    branching: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<CraftTask>, GenerateError> {
    if depth == 0 || branching == 0 {
        return Err(GenerateError::InvalidParameters);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let task_id = format!("craft-d{depth}-b{branching}-s{seed}-{i:04}");
            for _ in 0..MAX_ATTEMPTS {
                if let Some(task) = try_generate(&mut rng, &task_id, depth, branching)? {
                    return Ok(task);
                }
            }
            Err(GenerateError::GenerationOverflow {
                depth,
                branching,
                attempts: MAX_ATTEMPTS,
            })
        })
        .collect()
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    free: Vec<(usize, usize)>,
    used_forms_as_tags: BTreeSet<&'static str>,
    by_level: BTreeMap<usize, Vec<String>>,
    base: BTreeSet<String>,
    tags: BTreeMap<String, BTreeSet<String>>,
    recipes: Vec<Recipe>,
}

impl Builder<'_> {
    fn fresh_name(&mut self) -> Option<String> {
        let (m, f) = self.free.pop()?;
        Some(format!("{} {}", MATERIALS[m], FORMS[f]))
    }

    /// Two base items sharing a form word, both tagged with it.
    fn fresh_tag(&mut self) -> Option<String> {
        let forms: Vec<usize> = (0..FORMS.len())
            .filter(|f| !self.used_forms_as_tags.contains(FORMS[*f]))
            .filter(|f| self.free.iter().filter(|(_, ff)| ff == f).count() >= 2)
            .collect();
        let form = *forms.get(self.rng.random_range(0..forms.len().max(1)))?;
        let members: Vec<usize> = self
            .free
            .iter()
            .enumerate()
            .filter(|(_, (_, f))| *f == form)
            .map(|(i, _)| i)
            .take(2)
            .collect();
        let tag = FORMS[form].to_string();
        for idx in members.into_iter().rev() {
            let (m, f) = self.free.remove(idx);
            let name = format!("{} {}", MATERIALS[m], FORMS[f]);
            self.base.insert(name.clone());
            self.tags.entry(name).or_default().insert(tag.clone());
        }
        self.used_forms_as_tags.insert(FORMS[form]);
        Some(tag)
    }

    fn new_item(&mut self, level: usize) -> Option<String> {
        let name = self.fresh_name()?;
        if level == 0 {
            self.base.insert(name.clone());
        }
        self.by_level.entry(level).or_default().push(name.clone());
        Some(name)
    }

    fn pick_input(&mut self, level: usize, exclude: &[Ingredient]) -> Option<(String, bool)> {
        if level == 0 && self.rng.random_bool(TAG_PROBABILITY) {
            if let Some(tag) = self.fresh_tag() {
                return Some((tag, false));
            }
        }
        if self.rng.random_bool(REUSE_PROBABILITY) {
            let pool: Vec<String> = self
                .by_level
                .get(&level)
                .map(|v| {
                    v.iter()
                        .filter(|n| !exclude.iter().any(|e| &e.item == *n))
                        .cloned()
                        .collect()
                })
                .unwrap_or_default();
            if let Some(name) = pool.choose(self.rng) {
                return Some((name.clone(), false));
            }
        }
        let name = self.new_item(level)?;
        Some((name, level > 0))
    }
}

fn try_generate(
    rng: &mut ChaCha8Rng,
    task_id: &str,
    depth: usize,
    branching: usize,
) -> Result<Option<CraftTask>, GenerateError> {
    let mut free: Vec<(usize, usize)> = (0..MATERIALS.len())
        .flat_map(|m| (0..FORMS.len()).map(move |f| (m, f)))
        .collect();
    free.shuffle(rng);
    let mut b = Builder {
        rng,
        free,
        used_forms_as_tags: BTreeSet::new(),
        by_level: BTreeMap::new(),
        base: BTreeSet::new(),
        tags: BTreeMap::new(),
        recipes: Vec::new(),
    };

    let Some(target) = b.new_item(depth) else {
        return Ok(None);
    };
    let mut pending = vec![(target.clone(), depth)];
    while let Some((item, level)) = pending.pop() {
        let n_inputs = b.rng.random_range(1..=branching);
        let mut inputs: Vec<Ingredient> = Vec::with_capacity(n_inputs);
        for slot in 0..n_inputs {
            let input_level = if slot == 0 {
                level - 1
            } else {
                b.rng.random_range(0..level)
            };
            let Some((name, needs_recipe)) = b.pick_input(input_level, &inputs) else {
                return Ok(None);
            };
            if inputs.iter().any(|i| i.item == name) {
                continue;
            }
            if needs_recipe {
                pending.push((name.clone(), input_level));
            }
            let count = b.rng.random_range(1..=2);
            inputs.push(Ingredient { item: name, count });
        }
        let output_count = b.rng.random_range(1..=4);
        b.recipes.push(Recipe {
            output: item,
            output_count,
            inputs,
        });
    }

    let Builder {
        rng,
        base,
        tags,
        mut recipes,
        ..
    } = b;
    recipes.shuffle(rng);
    let graph = RecipeGraph::new(recipes, base, tags)?;
    if graph.depth_of(&target) != Some(depth) {
        return Ok(None);
    }
    let gold = match oracle_solve(&graph, &target) {
        Ok(g) => g,
        Err(_) => return Ok(None),
    };

    let text = instruction_text(graph.recipes(), &target);
    let instruction = Instruction::new(task_id, CRAFT_ENV_ID, text)
        .expect("task id nonempty")
        .with_gold_path(gold);
    Ok(Some(CraftTask {
        instruction,
        target,
        graph: Arc::new(graph),
        depth,
    }))
}

pub fn instruction_text(recipes: &[Recipe], target: &str) -> String {
    let mut text = String::from("Crafting commands:\n");
    for recipe in recipes {
        text.push_str(&recipe.listing());
        text.push('\n');
    }
    text.push_str(&format!("\nGoal: craft {target}."));
    text
}
