use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::critic::{Critic, CriticError, CritiqueRequest};
use crate::env::{EnvError, Environment};
use crate::policy::{render_actor_prompt, Actor, ActorContext, ActorError};
use crate::prompts::PromptError;
use crate::trajectory::{Instruction, LogError, LogHeader, LogWriter, Step, Trajectory, TrajectoryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CritiqueMode {
    /// Every candidate is criticised and the actor refines.
    PerStep,
    /// Candidate 0 is executed directly.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub critique_mode: CritiqueMode,
    pub seed: u64,
    pub round: u32,
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("actor: {0}")]
    Actor(#[from] ActorError),
    #[error("critic: {0}")]
    Critic(#[from] CriticError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("trajectory: {0}")]
    Trajectory(#[from] TrajectoryError),
    #[error("log: {0}")]
    Log(#[from] LogError),
    #[error("critique mode is per-step but no critic was given")]
    NoCritic,
    #[error("cancelled")]
    Cancelled,
}

impl EpisodeError {
    /// True when a model backend or bridged environment could not be reached.
    pub fn is_backend_unavailable(&self) -> bool {
        use crate::bridge::BridgeError;
        matches!(
            self,
            EpisodeError::Actor(ActorError::BackendUnavailable(_))
                | EpisodeError::Critic(CriticError::BackendUnavailable(_))
                | EpisodeError::Env(EnvError::Bridge(
                    BridgeError::Connect(_) | BridgeError::ConnectTimeout(_)
                ))
        )
    }
}

/// Episode seed from the master seed, round and task id: the first eight
/// bytes (little-endian) of SHA-256 over the three fields.
pub fn episode_seed(master_seed: u64, round: u32, task_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(round.to_le_bytes());
    h.update(task_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// The collaborators of one episode.
pub struct Episode<'a> {
    pub instruction: &'a Instruction,
    pub env: &'a mut dyn Environment,
    pub actor: &'a mut dyn Actor,
    pub critic: Option<&'a mut dyn Critic>,
    /// Commands the scripted actor may draw distractors from; replaced by
    /// the environment's own action list when it supplies one.
    pub vocabulary: &'a [String],
    pub cancel: Option<&'a AtomicBool>,
}

/// Runs one critique-guided episode until done or `max_steps`. When a log
/// sink is given every step is flushed as it happens, and the log is closed
/// with either the final reward or the abort reason.
pub fn run_episode<W: Write>(
    episode: Episode<'_>,
    cfg: &EpisodeConfig,
    log: Option<W>,
) -> Result<Trajectory, EpisodeError> {
    let traj = Trajectory::new(episode.instruction.clone(), cfg.seed, cfg.round).with_max_steps(cfg.max_steps);
    let mut writer = match log {
        Some(out) => Some(LogWriter::new(out, &LogHeader::for_trajectory(&traj))?),
        None => None,
    };
    let result = drive(episode, cfg, traj, writer.as_mut());
    if let Some(w) = writer {
        match &result {
            Ok(t) => {
                w.finish(t.final_reward().unwrap_or(0.0))?;
            }
            Err(e) => {
                w.abort(&e.to_string())?;
            }
        }
    }
    result
}

fn drive<W: Write>(
    ep: Episode<'_>,
    cfg: &EpisodeConfig,
    mut traj: Trajectory,
    mut log: Option<&mut LogWriter<W>>,
) -> Result<Trajectory, EpisodeError> {
    let Episode {
        instruction,
        env,
        actor,
        mut critic,
        vocabulary,
        cancel,
    } = ep;
    if cfg.critique_mode == CritiqueMode::PerStep && critic.is_none() {
        return Err(EpisodeError::NoCritic);
    }
    let cancelled = || cancel.is_some_and(|c| c.load(Ordering::Relaxed));
    let mut available = env.reset(&instruction.task_id, cfg.seed)?.available_actions;

    for t in 0..cfg.max_steps {
        if cancelled() {
            return Err(EpisodeError::Cancelled);
        }
        let prompt = render_actor_prompt(&instruction.env_id, instruction, &traj.steps)?;
        let ctx = ActorContext {
            prompt: &prompt,
            instruction,
            step_index: t,
            vocabulary: available.as_deref().unwrap_or(vocabulary),
        };
        let mut buffer = actor.sample_candidates(&ctx)?;
        let refined = match (cfg.critique_mode, critic.as_deref_mut()) {
            (CritiqueMode::Off, _) | (CritiqueMode::PerStep, None) => buffer
                .baseline()
                .cloned()
                .ok_or(ActorError::BackendUnavailable("no candidates returned".into()))?,
            (CritiqueMode::PerStep, Some(critic)) => {
                let history = traj.render_history(t)?;
                let executed = traj.executed_commands();
                let gold = critic.is_expert().then(|| instruction.gold_path.clone()).flatten();
                let critiques = buffer
                    .candidates
                    .iter()
                    .map(|cand| {
                        critic.critique(&CritiqueRequest {
                            env_id: instruction.env_id.clone(),
                            history: history.clone(),
                            candidate: cand.clone(),
                            gold_path: gold.clone(),
                            executed: executed.clone(),
                            available_actions: available.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                buffer = buffer.with_critiques(critiques)?;
                actor.refine_action(&ctx, &buffer)?
            }
        };
        let response = env.step(&refined.command)?;
        let step = Step {
            index: t,
            candidates: buffer,
            refined_action: refined,
            observation: response.observation,
        };
        if let Some(w) = log.as_deref_mut() {
            w.write_step(&step)?;
        }
        traj = traj.append_step(step)?;
        if response.available_actions.is_some() {
            available = response.available_actions;
        }
        if traj.is_terminated() {
            break;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craft::generate_tasks;
    use crate::critic::OracleCritic;
    use crate::env::CraftEnvironment;
    use crate::policy::ScriptedActor;
    use crate::trajectory::{parse_log, EpisodeStatus};

    #[test]
    fn seed_depends_on_every_field() {
        let base = episode_seed(7, 1, "a");
        assert_eq!(base, episode_seed(7, 1, "a"));
        assert_ne!(base, episode_seed(8, 1, "a"));
        assert_ne!(base, episode_seed(7, 2, "a"));
        assert_ne!(base, episode_seed(7, 1, "b"));
    }

    fn play(p: f64, mode: CritiqueMode, seed: u64) -> (Trajectory, Vec<u8>) {
        let task = generate_tasks(2, 2, 1, 11).unwrap().remove(0);
        let gold_len = task.gold_path().len();
        let max_steps = 4 * gold_len;
        let mut env = CraftEnvironment::new(task.env(max_steps));
        let mut actor = ScriptedActor::new(5, p, seed);
        let mut critic = OracleCritic::new(task.graph.clone(), &task.target);
        let vocab = task.env(max_steps).command_vocabulary();
        let cfg = EpisodeConfig {
            max_steps,
            critique_mode: mode,
            seed,
            round: 1,
        };
        let mut log = Vec::new();
        let traj = run_episode(
            Episode {
                instruction: &task.instruction,
                env: &mut env,
                actor: &mut actor,
                critic: Some(&mut critic),
                vocabulary: &vocab,
                cancel: None,
            },
            &cfg,
            Some(&mut log),
        )
        .unwrap();
        (traj, log)
    }

    #[test]
    fn perfect_actor_follows_gold() {
        let (traj, _) = play(1.0, CritiqueMode::PerStep, 3);
        assert_eq!(traj.final_reward().unwrap(), 1.0);
        assert_eq!(traj.executed_commands(), traj.instruction.gold_path.clone().unwrap());
    }

    #[test]
    fn oracle_critic_rescues_zero_fidelity() {
        let (traj, _) = play(0.0, CritiqueMode::PerStep, 3);
        assert_eq!(traj.final_reward().unwrap(), 1.0);
        assert_eq!(Some(traj.len()), traj.instruction.oracle_length);
        assert!(traj.steps.iter().all(|s| s.is_revised() == Some(true)));
    }

    #[test]
    fn critique_off_executes_candidate_zero() {
        let (traj, log) = play(0.0, CritiqueMode::Off, 3);
        for step in &traj.steps {
            assert_eq!(step.refined_action, step.candidates.candidates[0]);
            assert!(!step.candidates.is_criticised());
        }
        assert_eq!(traj.final_reward().unwrap(), 0.0);
        let logged = parse_log(log.as_slice()).unwrap();
        assert_eq!(logged.status, EpisodeStatus::Completed);
        assert_eq!(logged.trajectory, traj);
    }

    #[test]
    fn logs_are_deterministic() {
        assert_eq!(
            play(0.3, CritiqueMode::PerStep, 9).1,
            play(0.3, CritiqueMode::PerStep, 9).1
        );
        assert_eq!(play(0.3, CritiqueMode::Off, 9).1, play(0.3, CritiqueMode::Off, 9).1);
    }

    #[test]
    fn cancellation_aborts_with_footer() {
        let task = generate_tasks(1, 1, 1, 2).unwrap().remove(0);
        let mut env = CraftEnvironment::new(task.env(10));
        let mut actor = ScriptedActor::new(1, 1.0, 0);
        let flag = AtomicBool::new(true);
        let mut log = Vec::new();
        let err = run_episode(
            Episode {
                instruction: &task.instruction,
                env: &mut env,
                actor: &mut actor,
                critic: None,
                vocabulary: &[],
                cancel: Some(&flag),
            },
            &EpisodeConfig {
                max_steps: 10,
                critique_mode: CritiqueMode::Off,
                seed: 0,
                round: 1,
            },
            Some(&mut log),
        )
        .unwrap_err();
        assert!(matches!(err, EpisodeError::Cancelled));
        let logged = parse_log(log.as_slice()).unwrap();
        assert_eq!(logged.status, EpisodeStatus::Aborted("cancelled".into()));
    }

    #[test]
    fn per_step_without_critic_is_rejected() {
        let task = generate_tasks(1, 1, 1, 2).unwrap().remove(0);
        let mut env = CraftEnvironment::new(task.env(10));
        let mut actor = ScriptedActor::new(1, 1.0, 0);
        let r = run_episode::<Vec<u8>>(
            Episode {
                instruction: &task.instruction,
                env: &mut env,
                actor: &mut actor,
                critic: None,
                vocabulary: &[],
                cancel: None,
            },
            &EpisodeConfig {
                max_steps: 10,
                critique_mode: CritiqueMode::PerStep,
                seed: 0,
                round: 1,
            },
            None,
        );
        assert!(matches!(r, Err(EpisodeError::NoCritic)));
    }
}
