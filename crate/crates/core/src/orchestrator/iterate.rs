use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::AtomicBool;

use thiserror::Error;

use super::exploration::{expert_trajectory, run_exploration, ActorSpec, RoundHarvest, RunSpec, Task};
use crate::dataset::{
    build_correct_records, build_critique_records, build_expert_records, build_refine_records, mix_datasets,
    union_train, DatasetError, DatasetRecord, Manifest, MixCounts, MixSpec,
};
use crate::metrics::{evaluate_runs, write_figures, EvalReport};

#[derive(Debug, Error)]
pub enum IterateError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("trainer hook failed in round {round}: {reason}")]
    HookFailed { round: u32, reason: String },
    #[error("critique collection needs a critic with gold-path access")]
    NotExpert,
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("cancelled")]
    Cancelled,
}

/// External fine-tuning step: a shell command template with `{mixed_dataset}`,
/// `{round}` and `{base_endpoint}` placeholders. The last nonempty line it
/// prints is the endpoint of the new actor.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainerHook {
    pub command: Option<String>,
}

impl TrainerHook {
    pub fn noop() -> Self {
        Self { command: None }
    }

    /// `"noop"` or an empty string disables the hook.
    pub fn parse(template: &str) -> Self {
        let t = template.trim();
        Self {
            command: (!t.is_empty() && t != "noop").then(|| t.to_string()),
        }
    }

    pub fn invoke(&self, mixed: &Path, round: u32, base_endpoint: &str) -> Result<Option<String>, IterateError> {
        let Some(template) = &self.command else {
            return Ok(None);
        };
        let cmd = template
            .replace("{mixed_dataset}", &mixed.display().to_string())
            .replace("{round}", &round.to_string())
            .replace("{base_endpoint}", base_endpoint);
        let fail = |reason: String| IterateError::HookFailed { round, reason };
        let out = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .output()
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!(
                "{}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        let endpoint = stdout
            .lines()
            .map(str::trim)
            .rfind(|l| !l.is_empty())
            .ok_or_else(|| fail("hook printed no endpoint".into()))?;
        Ok(Some(endpoint.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct IterateConfig {
    pub rounds: u32,
    pub beta: f64,
    pub general: Vec<DatasetRecord>,
    pub mix_total: Option<usize>,
    pub mix_seed: u64,
    /// Emit only refine records whose action was revised.
    pub revised_only: bool,
    pub hook: TrainerHook,
}

impl IterateConfig {
    pub fn new(rounds: u32, beta: f64) -> Self {
        Self {
            rounds,
            beta,
            general: Vec::new(),
            mix_total: None,
            mix_seed: 0,
            revised_only: false,
            hook: TrainerHook::noop(),
        }
    }
}

/// Completed rounds, plus the error that stopped the loop early, if any.
#[derive(Debug)]
pub struct IterationOutcome {
    pub harvests: Vec<RoundHarvest>,
    pub failure: Option<IterateError>,
}

pub fn run_id_of(run_dir: &Path) -> String {
    run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

pub fn round_dir(run_dir: &Path, round: u32) -> PathBuf {
    run_dir.join(format!("round_{round}"))
}

fn cancelled(cancel: Option<&AtomicBool>) -> bool {
    cancel.is_some_and(|c| c.load(std::sync::atomic::Ordering::Relaxed))
}

/// Gold-path replays of every task with a gold path, logged under
/// `<run_dir>/expert/`, as expert records.
pub fn expert_records(run_dir: &Path, tasks: &[Task], spec: &RunSpec) -> Result<Vec<DatasetRecord>, IterateError> {
    let log_dir = run_dir.join("expert").join("trajectories");
    fs::create_dir_all(&log_dir)?;
    let mut trajs = Vec::new();
    for task in tasks {
        match expert_trajectory(task, spec, Some(&log_dir)) {
            Ok(Some(t)) => trajs.push(t),
            Ok(None) => log::warn!("no expert trajectory for {}", task.task_id()),
            Err(e) => log::warn!("expert replay of {} aborted: {e}", task.task_id()),
        }
    }
    Ok(build_expert_records(&run_id_of(run_dir), &trajs)?)
}

/// Writes `report.json` and `figures/` for a run directory from its logs.
pub fn write_run_report(run_dir: &Path) -> std::io::Result<EvalReport> {
    let report = evaluate_runs(&[run_dir.to_path_buf()])?;
    fs::write(run_dir.join("report.json"), report.to_json())?;
    write_figures(&report.aggregate, &run_dir.join("figures"))?;
    Ok(report)
}

/// A single round of episodes with logs and a report.
pub fn run_single(
    run_dir: &Path,
    tasks: &[Task],
    spec: &RunSpec,
    cancel: Option<&AtomicBool>,
) -> Result<(RoundHarvest, EvalReport), IterateError> {
    let harvest = run_exploration(1, tasks, spec, Some(&round_dir(run_dir, 1)), cancel)?;
    let report = write_run_report(run_dir)?;
    Ok((harvest, report))
}

/// One round with a gold-path critic; critiques from successful episodes
/// become the critique pool.
pub fn collect_critiques(
    run_dir: &Path,
    tasks: &[Task],
    spec: &RunSpec,
    cancel: Option<&AtomicBool>,
) -> Result<(RoundHarvest, Manifest), IterateError> {
    if !spec.critic.is_expert() {
        return Err(IterateError::NotExpert);
    }
    let dir = round_dir(run_dir, 1);
    let harvest = run_exploration(1, tasks, spec, Some(&dir), cancel)?;
    let records = build_critique_records(&run_id_of(run_dir), &harvest.d_correct)?;
    let mut manifest = Manifest::new(Some(run_id_of(run_dir)), Some(1));
    let datasets = dir.join("datasets");
    manifest.emit(&datasets, "critique.json", &records, true)?;
    manifest.write(&datasets.join("manifest_round1.json"))?;
    write_run_report(run_dir)?;
    Ok((harvest, manifest))
}

fn base_endpoint(actor: &ActorSpec) -> String {
    match actor {
        ActorSpec::Scripted { .. } => "scripted".into(),
        #[cfg(feature = "remote")]
        ActorSpec::Remote { client } => client.endpoint().to_string(),
    }
}

fn actor_for_endpoint(base: &ActorSpec, endpoint: &str) -> ActorSpec {
    match base {
        ActorSpec::Scripted { .. } => {
            log::warn!("trainer hook returned {endpoint}, but the scripted actor has no endpoint; keeping it");
            base.clone()
        }
        #[cfg(feature = "remote")]
        ActorSpec::Remote { client } => ActorSpec::Remote {
            client: client.with_endpoint(endpoint),
        },
    }
}

/// The iterative loop: per round, exploration, dataset emission (cumulative
/// train union, refine pairs, critique pool when the critic is expert, the
/// weighted mix and a manifest) and the trainer hook, whose endpoint drives
/// the next round. The hook always fine-tunes from the base actor.
pub fn run_iterations(
    run_dir: &Path,
    tasks: &[Task],
    spec: &RunSpec,
    cfg: &IterateConfig,
    cancel: Option<&AtomicBool>,
) -> Result<IterationOutcome, IterateError> {
    if cfg.rounds == 0 {
        return Err(IterateError::NoRounds);
    }
    let run_id = run_id_of(run_dir);
    let expert = expert_records(run_dir, tasks, spec)?;
    let mut train = union_train(&expert, &[]);
    let base = base_endpoint(&spec.actor);
    let mut round_spec = spec.clone();
    let mut harvests = Vec::new();

    for k in 1..=cfg.rounds {
        if cancelled(cancel) {
            return Ok(IterationOutcome {
                harvests,
                failure: Some(IterateError::Cancelled),
            });
        }
        let dir = round_dir(run_dir, k);
        let harvest = run_exploration(k, tasks, &round_spec, Some(&dir), cancel)?;
        let emitted = emit_round(&dir, k, &run_id, &expert, &mut train, &harvest, spec, cfg);
        let mixed = match emitted {
            Ok(path) => path,
            Err(e) => {
                harvests.push(harvest);
                return Ok(IterationOutcome {
                    harvests,
                    failure: Some(e),
                });
            }
        };
        harvests.push(harvest);
        match cfg.hook.invoke(&mixed, k, &base) {
            Ok(Some(endpoint)) => round_spec.actor = actor_for_endpoint(&spec.actor, &endpoint),
            Ok(None) => {}
            Err(e) => {
                return Ok(IterationOutcome {
                    harvests,
                    failure: Some(e),
                })
            }
        }
    }
    write_run_report(run_dir)?;
    Ok(IterationOutcome {
        harvests,
        failure: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn emit_round(
    dir: &Path,
    k: u32,
    run_id: &str,
    expert: &[DatasetRecord],
    train: &mut Vec<DatasetRecord>,
    harvest: &RoundHarvest,
    spec: &RunSpec,
    cfg: &IterateConfig,
) -> Result<PathBuf, IterateError> {
    let correct = build_correct_records(run_id, &harvest.d_correct)?;
    let criticised: Vec<_> = harvest
        .d_correct
        .iter()
        .filter(|t| t.steps.iter().all(|s| s.candidates.is_criticised()))
        .cloned()
        .collect();
    let refine = build_refine_records(run_id, &criticised, cfg.revised_only)?;
    *train = union_train(train, &correct);

    let datasets = dir.join("datasets");
    let mut manifest = Manifest::new(Some(run_id.to_string()), Some(k));
    manifest.emit(&datasets, "expert.json", expert, true)?;
    manifest.emit(&datasets, "correct.json", &correct, true)?;
    manifest.emit(&datasets, "refine.json", &refine, true)?;
    if spec.critic.is_expert() {
        let critique = build_critique_records(run_id, &criticised)?;
        manifest.emit(&datasets, "critique.json", &critique, true)?;
    }
    manifest.emit(&datasets, "train.json", train, false)?;

    let mut agentic = train.clone();
    agentic.extend(refine);
    let mix = MixSpec {
        beta: cfg.beta,
        agentic,
        general: cfg.general.clone(),
        total: cfg.mix_total,
        seed: cfg.mix_seed.wrapping_add(u64::from(k)),
    };
    let outcome = mix_datasets(&mix)?;
    let mixed_name = format!("mixed_round{k}.json");
    manifest.emit(&datasets, &mixed_name, &outcome.records, false)?;
    manifest.mix = Some(MixCounts::new(cfg.beta, mix.seed, &outcome));
    manifest.write(&datasets.join(format!("manifest_round{k}.json")))?;
    log::info!(
        "round {k}: {} correct, {} train, mix {}+{} at beta {}",
        harvest.d_correct.len(),
        train.len(),
        outcome.agentic,
        outcome.general,
        cfg.beta
    );
    Ok(datasets.join(mixed_name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hook_parsing_and_output() {
        assert_eq!(TrainerHook::parse("noop"), TrainerHook::noop());
        assert_eq!(TrainerHook::noop().invoke(Path::new("x"), 1, "b").unwrap(), None);
        let hook = TrainerHook::parse("echo training {mixed_dataset} {round}; echo http://new/{base_endpoint}");
        assert_eq!(
            hook.invoke(Path::new("/tmp/m.json"), 2, "base").unwrap().as_deref(),
            Some("http://new/base")
        );
    }

    #[test]
    fn hook_failures() {
        assert!(matches!(
            TrainerHook::parse("exit 3").invoke(Path::new("x"), 1, "b"),
            Err(IterateError::HookFailed { round: 1, .. })
        ));
        assert!(matches!(
            TrainerHook::parse("true").invoke(Path::new("x"), 2, "b"),
            Err(IterateError::HookFailed { round: 2, .. })
        ));
    }
}
