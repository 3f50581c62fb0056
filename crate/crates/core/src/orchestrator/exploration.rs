use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use serde::{Deserialize, Serialize};

use super::episode::{episode_seed, run_episode, CritiqueMode, Episode, EpisodeConfig, EpisodeError};
use crate::bridge::{BridgeConfig, BridgeEndpoint, BridgeEnvironment, BridgeSession};
use crate::craft::{default_max_steps, CraftTask};
#[cfg(feature = "remote")]
use crate::critic::RemoteCritic;
use crate::critic::{Critic, CriticError, DegradedCritic, OracleCritic};
use crate::env::{CraftEnvironment, EnvError, Environment};
use crate::policy::{Actor, ScriptedActor};
#[cfg(feature = "remote")]
use crate::policy::{ChatClient, RemoteActor};
use crate::trajectory::{AgentAction, CandidateBuffer, Instruction, Trajectory};

/// Step budget for tasks without a gold path.
pub const FALLBACK_MAX_STEPS: usize = 30;

#[derive(Debug, Clone)]
pub enum Task {
    Craft(CraftTask),
    /// A task served by an external environment; the gold path is optional.
    External(Instruction),
}

impl Task {
    pub fn instruction(&self) -> &Instruction {
        match self {
            Task::Craft(t) => &t.instruction,
            Task::External(i) => i,
        }
    }

    pub fn task_id(&self) -> &str {
        &self.instruction().task_id
    }

    /// Command vocabulary for scripted distractors (empty when unknown).
    pub fn vocabulary(&self) -> Vec<String> {
        match self {
            Task::Craft(t) => t.env(1).command_vocabulary(),
            Task::External(_) => Vec::new(),
        }
    }

    pub fn default_max_steps(&self) -> usize {
        self.instruction()
            .oracle_length
            .map(default_max_steps)
            .unwrap_or(FALLBACK_MAX_STEPS)
    }
}

#[derive(Debug, Clone)]
pub enum EnvSpec {
    /// Craft tasks run in-process.
    InProcess,
    /// Every episode opens its own session to the endpoint.
    Bridge {
        endpoint: BridgeEndpoint,
        config: BridgeConfig,
    },
}

#[derive(Debug, Clone)]
pub enum ActorSpec {
    Scripted {
        fidelity: f64,
    },
    #[cfg(feature = "remote")]
    Remote {
        client: ChatClient,
    },
}

#[derive(Debug, Clone)]
pub enum CriticSpec {
    None,
    /// Gold-path rubric critic (craft tasks only).
    Oracle,
    /// Oracle critic whose grades are perturbed with probability `q`.
    Degraded {
        q: f64,
    },
    #[cfg(feature = "remote")]
    Remote {
        client: ChatClient,
        with_gold: bool,
    },
}

impl CriticSpec {
    pub fn critique_mode(&self) -> CritiqueMode {
        match self {
            CriticSpec::None => CritiqueMode::Off,
            _ => CritiqueMode::PerStep,
        }
    }

    /// True when the critic sees the gold path.
    pub fn is_expert(&self) -> bool {
        match self {
            CriticSpec::None => false,
            CriticSpec::Oracle | CriticSpec::Degraded { .. } => true,
            #[cfg(feature = "remote")]
            CriticSpec::Remote { with_gold, .. } => *with_gold,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub env: EnvSpec,
    pub actor: ActorSpec,
    pub critic: CriticSpec,
    /// Candidates per step (M).
    pub candidates: usize,
    pub temperature: f64,
    pub dedup: bool,
    /// Step budget T; defaults per task when absent.
    pub max_steps: Option<usize>,
    pub master_seed: u64,
    pub workers: usize,
}

impl RunSpec {
    pub fn scripted(fidelity: f64, critic: CriticSpec, master_seed: u64) -> Self {
        Self {
            env: EnvSpec::InProcess,
            actor: ActorSpec::Scripted { fidelity },
            critic,
            candidates: crate::policy::DEFAULT_CANDIDATES,
            temperature: 1.0,
            dedup: false,
            max_steps: None,
            master_seed,
            workers: 4,
        }
    }

    fn max_steps_for(&self, task: &Task) -> usize {
        self.max_steps.unwrap_or_else(|| task.default_max_steps())
    }

    fn environment(&self, task: &Task, max_steps: usize) -> Result<Box<dyn Environment>, EpisodeError> {
        match (&self.env, task) {
            (EnvSpec::InProcess, Task::Craft(t)) => Ok(Box::new(CraftEnvironment::new(t.env(max_steps)))),
            (EnvSpec::InProcess, Task::External(i)) => Err(EpisodeError::Env(EnvError::Bridge(
                crate::bridge::BridgeError::ProtocolError(format!("task {} needs a bridged environment", i.task_id)),
            ))),
            (EnvSpec::Bridge { endpoint, config }, _) => {
                let session = BridgeSession::connect(endpoint, *config).map_err(EnvError::from)?;
                Ok(Box::new(BridgeEnvironment::new(session, Some(max_steps))))
            }
        }
    }

    fn actor(&self, seed: u64) -> Box<dyn Actor> {
        match &self.actor {
            ActorSpec::Scripted { fidelity } => {
                Box::new(ScriptedActor::new(self.candidates, *fidelity, seed).with_dedup(self.dedup))
            }
            #[cfg(feature = "remote")]
            ActorSpec::Remote { client } => {
                Box::new(RemoteActor::new(client.clone(), self.candidates, self.temperature))
            }
        }
    }

    fn critic(&self, task: &Task, seed: u64) -> Result<Option<Box<dyn Critic>>, EpisodeError> {
        let oracle = || match task {
            Task::Craft(t) => Ok(OracleCritic::new(t.graph.clone(), &t.target)),
            Task::External(_) => Err(EpisodeError::Critic(CriticError::NoGoldPath)),
        };
        Ok(match &self.critic {
            CriticSpec::None => None,
            CriticSpec::Oracle => Some(Box::new(oracle()?)),
            CriticSpec::Degraded { q } => Some(Box::new(DegradedCritic::new(
                oracle()?,
                *q,
                seed ^ 0x9e37_79b9_7f4a_7c15,
            ))),
            #[cfg(feature = "remote")]
            CriticSpec::Remote { client, with_gold } => {
                let c = RemoteCritic::new(client.clone());
                Some(Box::new(if *with_gold { c.expert() } else { c }))
            }
        })
    }
}

/// File name for a task's trajectory log.
pub fn log_file_name(task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.jsonl")
}

/// Runs one episode of `task` under `spec`, logging to `log_dir` if given.
pub fn run_task(
    task: &Task,
    round: u32,
    spec: &RunSpec,
    log_dir: Option<&Path>,
    cancel: Option<&AtomicBool>,
) -> Result<Trajectory, EpisodeError> {
    let seed = episode_seed(spec.master_seed, round, task.task_id());
    let max_steps = spec.max_steps_for(task);
    let cfg = EpisodeConfig {
        max_steps,
        critique_mode: spec.critic.critique_mode(),
        seed,
        round,
    };
    let vocabulary = task.vocabulary();
    let log = match log_dir {
        Some(dir) => Some(BufWriter::new(
            fs::File::create(dir.join(log_file_name(task.task_id()))).map_err(|e| EpisodeError::Log(e.into()))?,
        )),
        None => None,
    };
    let setup = spec
        .environment(task, max_steps)
        .and_then(|env| Ok((env, spec.critic(task, seed)?)));
    let (mut env, mut critic) = match setup {
        Ok(parts) => parts,
        Err(e) => {
            if let Some(out) = log {
                let header = crate::trajectory::LogHeader::for_trajectory(
                    &Trajectory::new(task.instruction().clone(), seed, round).with_max_steps(max_steps),
                );
                crate::trajectory::LogWriter::new(out, &header)?.abort(&e.to_string())?;
            }
            return Err(e);
        }
    };
    let mut actor = spec.actor(seed);
    run_episode(
        Episode {
            instruction: task.instruction(),
            env: env.as_mut(),
            actor: actor.as_mut(),
            critic: critic.as_mut().map(|c| c.as_mut() as &mut dyn Critic),
            vocabulary: &vocabulary,
            cancel,
        },
        &cfg,
        log,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortedEpisode {
    pub task_id: String,
    pub reason: String,
    pub backend_unavailable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestStats {
    pub round: u32,
    pub episodes: usize,
    pub completed: usize,
    pub aborted: usize,
    pub correct: usize,
    pub refine_pairs: usize,
    pub success_rate: Option<f64>,
}

/// One critique-action pair drawn from a successful trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinePair {
    pub task_id: String,
    pub step: usize,
    pub history: String,
    pub candidates: CandidateBuffer,
    pub refined: AgentAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundHarvest {
    pub round: u32,
    /// Every non-aborted trajectory, in task order.
    pub trajectories: Vec<Trajectory>,
    pub aborted: Vec<AbortedEpisode>,
    /// Trajectories with final reward exactly 1.
    pub d_correct: Vec<Trajectory>,
    pub d_refine: Vec<RefinePair>,
    pub stats: HarvestStats,
}

pub fn is_success(traj: &Trajectory) -> bool {
    traj.final_reward().is_ok_and(|r| r == 1.0)
}

impl RoundHarvest {
    pub fn from_results(round: u32, results: Vec<(String, Result<Trajectory, EpisodeError>)>) -> Self {
        let episodes = results.len();
        let mut trajectories = Vec::new();
        let mut aborted = Vec::new();
        for (task_id, r) in results {
            match r {
                Ok(t) => trajectories.push(t),
                Err(e) => {
                    log::warn!("episode {task_id} aborted: {e}");
                    aborted.push(AbortedEpisode {
                        task_id,
                        reason: e.to_string(),
                        backend_unavailable: e.is_backend_unavailable(),
                    })
                }
            }
        }
        let d_correct: Vec<Trajectory> = trajectories.iter().filter(|t| is_success(t)).cloned().collect();
        let d_refine: Vec<RefinePair> = d_correct
            .iter()
            .flat_map(|t| {
                t.steps
                    .iter()
                    .filter(|s| s.candidates.is_criticised())
                    .map(move |s| RefinePair {
                        task_id: t.instruction.task_id.clone(),
                        step: s.index,
                        history: t.render_history(s.index).expect("step index within trajectory"),
                        candidates: s.candidates.clone(),
                        refined: s.refined_action.clone(),
                    })
            })
            .collect();
        let completed = trajectories.len();
        let stats = HarvestStats {
            round,
            episodes,
            completed,
            aborted: aborted.len(),
            correct: d_correct.len(),
            refine_pairs: d_refine.len(),
            success_rate: (completed > 0).then(|| d_correct.len() as f64 / completed as f64),
        };
        Self {
            round,
            trajectories,
            aborted,
            d_correct,
            d_refine,
            stats,
        }
    }
}

/// Runs one episode per task for round `round` (episodes in parallel when
/// the `parallel` feature is on). Logs go to `<round_dir>/trajectories/`
/// and stats to `<round_dir>/harvest_stats.json` when a directory is given.
pub fn run_exploration(
    round: u32,
    tasks: &[Task],
    spec: &RunSpec,
    round_dir: Option<&Path>,
    cancel: Option<&AtomicBool>,
) -> std::io::Result<RoundHarvest> {
    let log_dir: Option<PathBuf> = round_dir.map(|d| d.join("trajectories"));
    if let Some(dir) = &log_dir {
        fs::create_dir_all(dir)?;
    }
    let one = |task: &Task| {
        (
            task.task_id().to_string(),
            run_task(task, round, spec, log_dir.as_deref(), cancel),
        )
    };
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers.max(1))
            .build()
            .map_err(std::io::Error::other)?;
        pool.install(|| tasks.par_iter().map(one).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = tasks.iter().map(one).collect();

    let harvest = RoundHarvest::from_results(round, results);
    if let Some(dir) = round_dir {
        let mut json = serde_json::to_string_pretty(&harvest.stats).map_err(std::io::Error::other)?;
        json.push('\n');
        fs::write(dir.join("harvest_stats.json"), json)?;
    }
    Ok(harvest)
}

/// Gold-path replay used as the expert trajectory of a task; `None` when
/// the task has no gold path or the replay does not reach reward 1.
pub fn expert_trajectory(
    task: &Task,
    spec: &RunSpec,
    log_dir: Option<&Path>,
) -> Result<Option<Trajectory>, EpisodeError> {
    if task.instruction().gold_path.is_none() {
        return Ok(None);
    }
    let expert_spec = RunSpec {
        actor: ActorSpec::Scripted { fidelity: 1.0 },
        critic: CriticSpec::None,
        candidates: 1,
        dedup: false,
        ..spec.clone()
    };
    let traj = run_task(task, 0, &expert_spec, log_dir, None)?;
    Ok(is_success(&traj).then_some(traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craft::generate_tasks;

    fn tasks(n: usize) -> Vec<Task> {
        generate_tasks(2, 2, n, 5)
            .unwrap()
            .into_iter()
            .map(Task::Craft)
            .collect()
    }

    #[test]
    fn oracle_round_all_succeed() {
        let tasks = tasks(6);
        let h = run_exploration(1, &tasks, &RunSpec::scripted(0.2, CriticSpec::Oracle, 1), None, None).unwrap();
        assert_eq!(h.d_correct.len(), 6);
        let steps: usize = h.d_correct.iter().map(|t| t.len()).sum();
        assert_eq!(h.d_refine.len(), steps);
        assert_eq!(h.stats.success_rate, Some(1.0));
    }

    #[test]
    fn failing_round_is_empty_harvest() {
        let tasks = tasks(4);
        let mut spec = RunSpec::scripted(0.0, CriticSpec::None, 1);
        spec.max_steps = Some(1);
        let h = run_exploration(1, &tasks, &spec, None, None).unwrap();
        assert!(h.d_correct.is_empty());
        assert!(h.d_refine.is_empty());
        assert_eq!(h.trajectories.len(), 4);
    }

    #[test]
    fn order_independent_of_workers() {
        let tasks = tasks(8);
        let mut spec = RunSpec::scripted(0.4, CriticSpec::None, 3);
        spec.workers = 1;
        let a = run_exploration(1, &tasks, &spec, None, None).unwrap();
        spec.workers = 8;
        let b = run_exploration(1, &tasks, &spec, None, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn external_task_in_process_aborts() {
        let ext = Task::External(Instruction::new("w1", "webshop", "buy a shirt").unwrap());
        let h = run_exploration(1, &[ext], &RunSpec::scripted(1.0, CriticSpec::None, 0), None, None).unwrap();
        assert_eq!(h.aborted.len(), 1);
        assert!(h.trajectories.is_empty());
    }

    #[test]
    fn expert_replay_succeeds() {
        let task = &tasks(1)[0];
        let t = expert_trajectory(task, &RunSpec::scripted(0.0, CriticSpec::Oracle, 0), None)
            .unwrap()
            .unwrap();
        assert_eq!(t.executed_commands(), task.instruction().gold_path.clone().unwrap());
        assert_eq!(t.round, 0);
    }
}
