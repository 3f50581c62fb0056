//! Training corpora in the ShareGPT conversation layout: record builders
//! for each pool, the cumulative train union, the weighted mix, manifests
//! and the provenance audit.

mod audit;
mod manifest;
mod mix;
mod schema;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{audit_run, AuditReport};
pub use manifest::{file_checksum, verify_manifest, FileEntry, Manifest, MixCounts};
pub use mix::{mix_datasets, MixOutcome, MixSpec};
pub use schema::{validate_file, validate_record};

use crate::critic::{render_critique_prompt, CritiqueRequest};
use crate::prompts::{env_prompts, render_refine_turn, PromptError};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Critique,
    Correct,
    Refine,
    General,
    Expert,
}

impl Pool {
    pub fn name(self) -> &'static str {
        match self {
            Pool::Critique => "critique",
            Pool::Correct => "correct",
            Pool::Refine => "refine",
            Pool::General => "general",
            Pool::Expert => "expert",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Gpt,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Turn {
    pub from: Speaker,
    pub value: String,
}

impl Turn {
    pub fn human(value: impl Into<String>) -> Self {
        Self {
            from: Speaker::Human,
            value: value.into(),
        }
    }

    pub fn gpt(value: impl Into<String>) -> Self {
        Self {
            from: Speaker::Gpt,
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub round: u32,
    pub task_id: String,
    pub env_id: String,
    /// Step index for per-step records; absent for whole-episode records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

fn general_pool() -> Pool {
    Pool::General
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub conversations: Vec<Turn>,
    pub system: String,
    #[serde(default = "general_pool")]
    pub pool: Pool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl DatasetRecord {
    pub fn env_id(&self) -> &str {
        self.provenance.as_ref().map(|p| p.env_id.as_str()).unwrap_or("general")
    }

    fn human_text(&self) -> impl Iterator<Item = &str> {
        self.conversations
            .iter()
            .filter(|t| t.from == Speaker::Human)
            .map(|t| t.value.as_str())
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("trajectory {task_id} has final reward {reward}, pools accept only reward 1")]
    RewardFilterViolation { task_id: String, reward: f64 },
    #[error("step {step} of {task_id} has no critiques")]
    MissingCritiques { task_id: String, step: usize },
    #[error("pool {0} is empty but has nonzero weight")]
    EmptyPool(&'static str),
    #[error("beta must lie in [0, 1], got {0}")]
    InvalidBeta(f64),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn require_success(traj: &Trajectory) -> Result<(), DatasetError> {
    match traj.final_reward() {
        Ok(1.0) => Ok(()),
        r => Err(DatasetError::RewardFilterViolation {
            task_id: traj.instruction.task_id.clone(),
            reward: r.unwrap_or(0.0),
        }),
    }
}

fn provenance(run_id: &str, traj: &Trajectory, step: Option<usize>) -> Provenance {
    Provenance {
        run_id: run_id.to_string(),
        round: traj.round,
        task_id: traj.instruction.task_id.clone(),
        env_id: traj.instruction.env_id.clone(),
        step,
    }
}

/// True when a text carries a rendered candidate critique.
pub fn has_critique_block(text: &str) -> bool {
    text.contains("### Candidate ") || text.contains("## Overall Grading:")
}

/// One record per (step, candidate): the plain critique prompt (never the
/// gold-path variant) answered by the critique text.
pub fn build_critique_records(run_id: &str, trajs: &[Trajectory]) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut out = Vec::new();
    for traj in trajs {
        require_success(traj)?;
        let executed = traj.executed_commands();
        for step in &traj.steps {
            if !step.candidates.is_criticised() {
                return Err(DatasetError::MissingCritiques {
                    task_id: traj.instruction.task_id.clone(),
                    step: step.index,
                });
            }
            let history = traj.render_history(step.index).expect("step index within trajectory");
            for (cand, critique) in step.candidates.candidates.iter().zip(&step.candidates.critiques) {
                let req = CritiqueRequest {
                    env_id: traj.instruction.env_id.clone(),
                    history: history.clone(),
                    candidate: cand.clone(),
                    gold_path: None,
                    executed: executed[..step.index].to_vec(),
                    available_actions: None,
                };
                let prompt = render_critique_prompt(&req)?.remove(0).content;
                out.push(DatasetRecord {
                    conversations: vec![Turn::human(prompt), Turn::gpt(critique.raw.clone())],
                    system: String::new(),
                    pool: Pool::Critique,
                    provenance: Some(provenance(run_id, traj, Some(step.index))),
                });
            }
        }
    }
    Ok(out)
}

/// One multi-turn record per trajectory: task and observations as human
/// turns, refined actions as gpt turns. Critiques are left out.
pub fn build_correct_records(run_id: &str, trajs: &[Trajectory]) -> Result<Vec<DatasetRecord>, DatasetError> {
    build_episode_records(run_id, trajs, Pool::Correct)
}

/// Same layout as [`build_correct_records`] for gold-path replays.
pub fn build_expert_records(run_id: &str, trajs: &[Trajectory]) -> Result<Vec<DatasetRecord>, DatasetError> {
    build_episode_records(run_id, trajs, Pool::Expert)
}

fn build_episode_records(run_id: &str, trajs: &[Trajectory], pool: Pool) -> Result<Vec<DatasetRecord>, DatasetError> {
    trajs
        .iter()
        .map(|traj| {
            require_success(traj)?;
            let system = env_prompts(&traj.instruction.env_id)?.actor_system.to_string();
            let mut conversations = vec![Turn::human(traj.instruction.text.clone())];
            for (i, step) in traj.steps.iter().enumerate() {
                if i > 0 {
                    conversations.push(Turn::human(traj.steps[i - 1].observation.text.clone()));
                }
                conversations.push(Turn::gpt(step.refined_action.raw.clone()));
            }
            Ok(DatasetRecord {
                conversations,
                system,
                pool,
                provenance: Some(provenance(run_id, traj, None)),
            })
        })
        .collect()
}

/// One record per step: history, every candidate with its critique and the
/// refine instruction, answered by the refined action. With `revised_only`
/// steps whose refined action equals candidate 0 are skipped.
pub fn build_refine_records(
    run_id: &str,
    trajs: &[Trajectory],
    revised_only: bool,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut out = Vec::new();
    for traj in trajs {
        require_success(traj)?;
        let system = env_prompts(&traj.instruction.env_id)?.actor_system.to_string();
        for step in &traj.steps {
            if !step.candidates.is_criticised() {
                return Err(DatasetError::MissingCritiques {
                    task_id: traj.instruction.task_id.clone(),
                    step: step.index,
                });
            }
            if revised_only && step.is_revised() != Some(true) {
                continue;
            }
            let history = traj.render_history(step.index).expect("step index within trajectory");
            let human = format!("{history}\n\n{}", render_refine_turn(&step.candidates));
            out.push(DatasetRecord {
                conversations: vec![Turn::human(human), Turn::gpt(step.refined_action.raw.clone())],
                system: system.clone(),
                pool: Pool::Refine,
                provenance: Some(provenance(run_id, traj, Some(step.index))),
            });
        }
    }
    Ok(out)
}

fn dedup_key(r: &DatasetRecord) -> (String, String) {
    let task = r.provenance.as_ref().map(|p| p.task_id.clone()).unwrap_or_default();
    let conv = serde_json::to_string(&r.conversations).expect("conversations serialize");
    (task, conv)
}

/// Concatenation of both lists with duplicates by (task id, conversation
/// bytes) removed; on collision the earlier (expert) record wins.
pub fn union_train(expert: &[DatasetRecord], correct: &[DatasetRecord]) -> Vec<DatasetRecord> {
    let mut seen = HashSet::new();
    expert
        .iter()
        .chain(correct)
        .filter(|r| seen.insert(dedup_key(r)))
        .cloned()
        .collect()
}

/// Serializes records as a JSON array with exactly one record per line,
/// so the record count is the line count minus two.
pub fn records_to_json(records: &[DatasetRecord]) -> String {
    let mut out = String::from("[\n");
    let lines: Vec<String> = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize"))
        .collect();
    out.push_str(&lines.join(",\n"));
    if !lines.is_empty() {
        out.push('\n');
    }
    out.push_str("]\n");
    out
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, records_to_json(records))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// Checks that refine records carry critique blocks and that correct and
/// expert records do not. Returns a description of each offending record.
pub fn pool_purity_violations(records: &[DatasetRecord]) -> Vec<String> {
    records
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let has_block = r.human_text().any(has_critique_block);
            let bad = match r.pool {
                Pool::Refine => !has_block,
                Pool::Correct | Pool::Expert => has_block,
                _ => false,
            };
            bad.then(|| format!("record {i} ({}) in pool {}", dedup_key(r).0, r.pool.name()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craft::generate_tasks;
    use crate::orchestrator::{run_exploration, CriticSpec, RunSpec, Task};
    use crate::policy::parse_thought_action;

    fn harvest(p: f64, critic: CriticSpec, n: usize) -> Vec<Trajectory> {
        let tasks: Vec<Task> = generate_tasks(2, 2, n, 21)
            .unwrap()
            .into_iter()
            .map(Task::Craft)
            .collect();
        run_exploration(1, &tasks, &RunSpec::scripted(p, critic, 4), None, None)
            .unwrap()
            .trajectories
    }

    #[test]
    fn critique_records_count_and_no_leak() {
        let trajs = harvest(0.5, CriticSpec::Oracle, 3);
        let recs = build_critique_records("r", &trajs).unwrap();
        let expected: usize = trajs.iter().map(|t| t.len() * 5).sum();
        assert_eq!(recs.len(), expected);
        for r in &recs {
            assert!(!r.conversations[0].value.contains("Referenced Gold Path"));
            assert_eq!(r.pool, Pool::Critique);
        }
    }

    #[test]
    fn failed_trajectory_is_rejected() {
        let mut trajs = harvest(0.0, CriticSpec::None, 1);
        trajs.truncate(1);
        assert!(trajs[0].final_reward().unwrap() < 1.0);
        assert!(matches!(
            build_correct_records("r", &trajs),
            Err(DatasetError::RewardFilterViolation { .. })
        ));
        assert!(matches!(
            build_refine_records("r", &trajs, false),
            Err(DatasetError::RewardFilterViolation { .. })
        ));
        assert!(matches!(
            build_critique_records("r", &trajs),
            Err(DatasetError::RewardFilterViolation { .. })
        ));
    }

    #[test]
    fn correct_records_round_trip_commands() {
        let trajs = harvest(1.0, CriticSpec::None, 2);
        let recs = build_correct_records("r", &trajs).unwrap();
        assert_eq!(recs.len(), 2);
        for (r, t) in recs.iter().zip(&trajs) {
            let gpt: Vec<&Turn> = r.conversations.iter().filter(|t| t.from == Speaker::Gpt).collect();
            assert_eq!(gpt.len(), t.len());
            let cmds: Vec<String> = gpt
                .iter()
                .map(|turn| parse_thought_action(&turn.value).unwrap().command)
                .collect();
            assert_eq!(cmds, t.executed_commands());
            assert_eq!(r.conversations.last().unwrap().from, Speaker::Gpt);
        }
        assert!(build_correct_records("r", &[]).unwrap().is_empty());
    }

    #[test]
    fn refine_records_have_m_blocks() {
        let trajs = harvest(0.3, CriticSpec::Oracle, 2);
        let recs = build_refine_records("r", &trajs, false).unwrap();
        assert_eq!(recs.len(), trajs.iter().map(|t| t.len()).sum::<usize>());
        for r in &recs {
            assert_eq!(r.conversations[0].value.matches("\n### Candidate ").count(), 5);
        }
        assert!(pool_purity_violations(&recs).is_empty());
        let revised = build_refine_records("r", &trajs, true).unwrap();
        assert!(revised.len() <= recs.len());
    }

    #[test]
    fn refine_without_critiques() {
        let trajs = harvest(1.0, CriticSpec::None, 1);
        assert!(matches!(
            build_refine_records("r", &trajs, false),
            Err(DatasetError::MissingCritiques { step: 0, .. })
        ));
    }

    fn rec(task: &str, text: &str, pool: Pool) -> DatasetRecord {
        DatasetRecord {
            conversations: vec![Turn::human("q"), Turn::gpt(text)],
            system: String::new(),
            pool,
            provenance: Some(Provenance {
                run_id: "r".into(),
                round: 0,
                task_id: task.into(),
                env_id: "craftsim".into(),
                step: None,
            }),
        }
    }

    #[test]
    fn union_rules() {
        let expert: Vec<_> = (0..5).map(|i| rec(&format!("e{i}"), "a", Pool::Expert)).collect();
        let correct: Vec<_> = (0..3).map(|i| rec(&format!("c{i}"), "a", Pool::Correct)).collect();
        assert_eq!(union_train(&expert, &correct).len(), 8);
        let dup = vec![rec("e0", "a", Pool::Correct)];
        let u = union_train(&expert, &dup);
        assert_eq!(u.len(), 5);
        assert_eq!(u[0].pool, Pool::Expert);
        assert_eq!(union_train(&expert, &[]), expert);
    }

    #[test]
    fn json_layout_one_record_per_line() {
        let recs: Vec<_> = (0..3).map(|i| rec(&format!("t{i}"), "a", Pool::Correct)).collect();
        let text = records_to_json(&recs);
        assert_eq!(text.lines().count(), 5);
        let back: Vec<DatasetRecord> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, recs);
        assert_eq!(records_to_json(&[]), "[\n]\n");
    }

    #[test]
    fn general_records_default_pool() {
        let r: DatasetRecord = serde_json::from_str(
            r#"{"conversations":[{"from":"human","value":"hi"},{"from":"gpt","value":"hello"}],"system":""}"#,
        )
        .unwrap();
        assert_eq!(r.pool, Pool::General);
        assert!(r.provenance.is_none());
    }
}
