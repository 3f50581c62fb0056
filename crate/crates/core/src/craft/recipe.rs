use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("recipe for {0} lists no inputs")]
    NoInputs(String),
    #[error("recipe for {0} consumes its own output")]
    SelfInput(String),
    #[error("recipe for {item} has a zero count")]
    ZeroCount { item: String },
    #[error("recipe graph contains a cycle through {0}")]
    Cycle(String),
    #[error("item {0} is neither a base item nor the output of any recipe")]
    Unobtainable(String),
    #[error("tag {0} is not carried by any base item")]
    EmptyTag(String),
}

/// Collapses whitespace and lowercases; item names compare in this form.
pub fn normalize_item(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ingredient {
    /// An item name, or a tag satisfied by any base item carrying it.
    pub item: String,
    pub count: u32,
}

impl Ingredient {
    pub fn new(item: &str, count: u32) -> Self {
        Self {
            item: normalize_item(item),
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub output: String,
    pub output_count: u32,
    pub inputs: Vec<Ingredient>,
}

impl Recipe {
    pub fn new(output: &str, output_count: u32, inputs: &[(&str, u32)]) -> Self {
        Self {
            output: normalize_item(output),
            output_count,
            inputs: inputs.iter().map(|(i, c)| Ingredient::new(i, *c)).collect(),
        }
    }

    /// TextCraft-style listing line, counts always shown.
    pub fn listing(&self) -> String {
        let inputs = self
            .inputs
            .iter()
            .map(|i| format!("{} {}", i.count, i.item))
            .collect::<Vec<_>>()
            .join(", ");
        format!("craft {} {} using {}", self.output_count, self.output, inputs)
    }
}

/// Immutable crafting DAG. Construct through [`RecipeGraph::new`], which
/// checks acyclicity and reachability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecipeGraph {
    recipes: Vec<Recipe>,
    base_items: BTreeSet<String>,
    /// base item -> tags it carries
    tags: BTreeMap<String, BTreeSet<String>>,
    #[serde(skip)]
    levels: BTreeMap<String, usize>,
}

impl RecipeGraph {
    pub fn new(
        recipes: Vec<Recipe>,
        base_items: impl IntoIterator<Item = String>,
        tags: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self, GraphError> {
        let base_items: BTreeSet<String> = base_items.into_iter().map(|b| normalize_item(&b)).collect();
        let tags: BTreeMap<String, BTreeSet<String>> = tags
            .into_iter()
            .map(|(k, v)| (normalize_item(&k), v.iter().map(|t| normalize_item(t)).collect()))
            .collect();
        let mut graph = Self {
            recipes,
            base_items,
            tags,
            levels: BTreeMap::new(),
        };
        graph.validate()?;
        graph.levels = graph.compute_levels()?;
        Ok(graph)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let all_tags: BTreeSet<&String> = self.tags.values().flatten().collect();
        for recipe in &self.recipes {
            if recipe.inputs.is_empty() {
                return Err(GraphError::NoInputs(recipe.output.clone()));
            }
            if recipe.output_count == 0 {
                return Err(GraphError::ZeroCount {
                    item: recipe.output.clone(),
                });
            }
            for input in &recipe.inputs {
                if input.item == recipe.output {
                    return Err(GraphError::SelfInput(recipe.output.clone()));
                }
                if input.count == 0 {
                    return Err(GraphError::ZeroCount {
                        item: recipe.output.clone(),
                    });
                }
                let known = self.base_items.contains(&input.item)
                    || all_tags.contains(&input.item)
                    || self.recipes.iter().any(|r| r.output == input.item);
                if !known {
                    return Err(GraphError::Unobtainable(input.item.clone()));
                }
            }
        }
        for tag in self.recipes.iter().flat_map(|r| &r.inputs) {
            if all_tags.contains(&tag.item) && self.tagged(&tag.item).next().is_none() {
                return Err(GraphError::EmptyTag(tag.item.clone()));
            }
        }
        Ok(())
    }

    /// Longest chain from base items, per item. Fails on cycles.
    fn compute_levels(&self) -> Result<BTreeMap<String, usize>, GraphError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Visiting,
            Done,
        }
        fn visit(
            graph: &RecipeGraph,
            item: &str,
            marks: &mut BTreeMap<String, Mark>,
            levels: &mut BTreeMap<String, usize>,
        ) -> Result<usize, GraphError> {
            match marks.get(item) {
                Some(Mark::Done) => return Ok(levels[item]),
                Some(Mark::Visiting) => return Err(GraphError::Cycle(item.to_string())),
                None => {}
            }
            if graph.is_base(item) || graph.is_tag(item) {
                marks.insert(item.to_string(), Mark::Done);
                levels.insert(item.to_string(), 0);
                return Ok(0);
            }
            marks.insert(item.to_string(), Mark::Visiting);
            let mut best: Option<usize> = None;
            for recipe in graph.recipes.iter().filter(|r| r.output == item) {
                let mut deepest = 0;
                for input in &recipe.inputs {
                    deepest = deepest.max(visit(graph, &input.item, marks, levels)?);
                }
                best = Some(best.map_or(deepest + 1, |b: usize| b.min(deepest + 1)));
            }
            let level = best.ok_or_else(|| GraphError::Unobtainable(item.to_string()))?;
            marks.insert(item.to_string(), Mark::Done);
            levels.insert(item.to_string(), level);
            Ok(level)
        }

        let mut marks = BTreeMap::new();
        let mut levels = BTreeMap::new();
        for recipe in &self.recipes {
            visit(self, &recipe.output, &mut marks, &mut levels)?;
        }
        for base in &self.base_items {
            levels.entry(base.clone()).or_insert(0);
        }
        Ok(levels)
    }

    pub fn recipes(&self) -> &[Recipe] {
        &self.recipes
    }

    pub fn base_items(&self) -> &BTreeSet<String> {
        &self.base_items
    }

    pub fn tags(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.tags
    }

    pub fn is_base(&self, item: &str) -> bool {
        self.base_items.contains(item)
    }

    pub fn is_tag(&self, name: &str) -> bool {
        self.tags.values().any(|t| t.contains(name))
    }

    /// Base items carrying `tag`, in sorted order.
    pub fn tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.tags
            .iter()
            .filter(move |(item, tags)| tags.contains(tag) && self.base_items.contains(*item))
            .map(|(item, _)| item)
    }

    /// Whether inventory item `item` satisfies ingredient name `wanted`.
    pub fn satisfies(&self, item: &str, wanted: &str) -> bool {
        item == wanted || self.tags.get(item).is_some_and(|t| t.contains(wanted))
    }

    pub fn recipes_for<'a>(&'a self, output: &'a str) -> impl Iterator<Item = &'a Recipe> + 'a {
        self.recipes.iter().filter(move |r| r.output == output)
    }

    /// Every item name that appears in the graph, sorted.
    pub fn items(&self) -> BTreeSet<String> {
        let mut items: BTreeSet<String> = self.base_items.clone();
        for recipe in &self.recipes {
            items.insert(recipe.output.clone());
            for input in &recipe.inputs {
                if !self.is_tag(&input.item) {
                    items.insert(input.item.clone());
                }
            }
        }
        items
    }

    pub fn is_known(&self, name: &str) -> bool {
        self.base_items.contains(name) || self.is_tag(name) || self.recipes.iter().any(|r| r.output == name)
    }

    /// Longest recipe chain from base items to `item`.
    pub fn depth_of(&self, item: &str) -> Option<usize> {
        self.levels.get(item).copied()
    }

    /// Items (excluding base items and tags) that `target` transitively
    /// depends on, plus the target itself when craftable.
    pub fn craftable_ancestors(&self, target: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut stack = vec![target.to_string()];
        while let Some(item) = stack.pop() {
            if self.is_base(&item) || self.is_tag(&item) || !out.insert(item.clone()) {
                continue;
            }
            for recipe in self.recipes_for(&item) {
                stack.extend(recipe.inputs.iter().map(|i| i.item.clone()));
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct GraphRepr {
    recipes: Vec<Recipe>,
    base_items: Vec<String>,
    #[serde(default)]
    tags: BTreeMap<String, BTreeSet<String>>,
}

impl<'de> Deserialize<'de> for RecipeGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = GraphRepr::deserialize(d)?;
        RecipeGraph::new(repr.recipes, repr.base_items, repr.tags).map_err(serde::de::Error::custom)
    }
}
