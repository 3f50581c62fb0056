//! Browser bindings: generate a crafting task, watch one scripted episode
//! with or without the oracle critic, and sweep success rate over actor
//! fidelity. Every export returns a JSON string; seeds are u32 so plain JS
//! numbers can be passed.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cgi_core::craft::{generate_tasks, CraftTask};
use cgi_core::orchestrator::{is_success, run_task, CriticSpec, RunSpec, Task};

#[derive(Debug, Serialize)]
pub struct TaskView {
    pub task_id: String,
    pub instruction: String,
    pub gold_path: Vec<String>,
    pub oracle_length: usize,
}

#[derive(Debug, Serialize)]
pub struct CandidateView {
    pub command: String,
    pub grade: Option<String>,
    pub revision: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct StepView {
    pub t: usize,
    pub candidates: Vec<CandidateView>,
    pub action: String,
    pub revised: bool,
    pub observation: String,
    pub score: f64,
}

#[derive(Debug, Serialize)]
pub struct EpisodeView {
    pub task: TaskView,
    pub steps: Vec<StepView>,
    pub final_reward: f64,
    pub success: bool,
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub fidelity: f64,
    pub with_critic: f64,
    pub without_critic: f64,
}

fn one_task(depth: usize, branching: usize, seed: u64) -> Result<CraftTask, String> {
    generate_tasks(depth, branching, 1, seed)
        .map_err(|e| e.to_string())?
        .pop()
        .ok_or_else(|| "no task generated".into())
}

fn view(task: &CraftTask) -> TaskView {
    TaskView {
        task_id: task.instruction.task_id.clone(),
        instruction: task.instruction.text.clone(),
        gold_path: task.gold_path().to_vec(),
        oracle_length: task.gold_path().len(),
    }
}

fn spec(fidelity: f64, candidates: usize, critic: bool, seed: u64) -> Result<RunSpec, String> {
    if !(0.0..=1.0).contains(&fidelity) {
        return Err("fidelity must be in [0, 1]".into());
    }
    if candidates == 0 {
        return Err("at least one candidate is needed".into());
    }
    let critic = if critic { CriticSpec::Oracle } else { CriticSpec::None };
    Ok(RunSpec {
        candidates,
        workers: 1,
        ..RunSpec::scripted(fidelity, critic, seed)
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn task_json(depth: usize, branching: usize, seed: u64) -> Result<String, String> {
    to_json(&view(&one_task(depth, branching, seed)?))
}

pub fn episode(
    depth: usize,
    branching: usize,
    task_seed: u64,
    fidelity: f64,
    candidates: usize,
    critic: bool,
    seed: u64,
) -> Result<EpisodeView, String> {
    let task = one_task(depth, branching, task_seed)?;
    let spec = spec(fidelity, candidates, critic, seed)?;
    let traj = run_task(&Task::Craft(task.clone()), 1, &spec, None, None).map_err(|e| e.to_string())?;
    let steps = traj
        .steps
        .iter()
        .map(|s| {
            let critiques = &s.candidates.critiques;
            StepView {
                t: s.index,
                candidates: s
                    .candidates
                    .candidates
                    .iter()
                    .enumerate()
                    .map(|(i, c)| CandidateView {
                        command: c.command.clone(),
                        grade: critiques.get(i).map(|k| k.grade.to_string()),
                        revision: critiques.get(i).and_then(|k| k.suggested_revision.clone()),
                    })
                    .collect(),
                action: s.refined_action.command.clone(),
                revised: s.is_revised().unwrap_or(false),
                observation: s.observation.text.clone(),
                score: s.observation.score,
            }
        })
        .collect();
    Ok(EpisodeView {
        task: view(&task),
        steps,
        final_reward: traj.final_reward().unwrap_or(0.0),
        success: is_success(&traj),
    })
}

pub fn sweep(
    depth: usize,
    branching: usize,
    count: usize,
    candidates: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>, String> {
    let tasks: Vec<Task> = generate_tasks(depth, branching, count, seed)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(Task::Craft)
        .collect();
    let rate = |fidelity: f64, critic: bool| -> Result<f64, String> {
        let spec = spec(fidelity, candidates, critic, seed)?;
        let mut wins = 0usize;
        for task in &tasks {
            let traj = run_task(task, 1, &spec, None, None).map_err(|e| e.to_string())?;
            wins += usize::from(is_success(&traj));
        }
        Ok(wins as f64 / tasks.len().max(1) as f64)
    };
    (0..=10)
        .map(|i| {
            let fidelity = i as f64 / 10.0;
            Ok(SweepPoint {
                fidelity,
                with_critic: rate(fidelity, true)?,
                without_critic: rate(fidelity, false)?,
            })
        })
        .collect()
}

#[wasm_bindgen(js_name = generateTask)]
pub fn generate_task(depth: usize, branching: usize, seed: u32) -> Result<String, JsError> {
    task_json(depth, branching, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulateEpisode)]
pub fn simulate_episode(
    depth: usize,
    branching: usize,
    task_seed: u32,
    fidelity: f64,
    candidates: usize,
    critic: bool,
    seed: u32,
) -> Result<String, JsError> {
    episode(
        depth,
        branching,
        task_seed.into(),
        fidelity,
        candidates,
        critic,
        seed.into(),
    )
    .and_then(|v| to_json(&v))
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = successSweep)]
pub fn success_sweep(
    depth: usize,
    branching: usize,
    count: usize,
    candidates: usize,
    seed: u32,
) -> Result<String, JsError> {
    sweep(depth, branching, count, candidates, seed.into())
        .and_then(|v| to_json(&v))
        .map_err(|e| JsError::new(&e))
}
