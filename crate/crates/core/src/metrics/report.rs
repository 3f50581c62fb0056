use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{avg_final_score, cumulative_series, difficulty_buckets, revision_ratio, success_rate, Bucket, StageCount};
use crate::trajectory::{read_log, LoggedEpisode, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub task_id: String,
    pub round: u32,
    pub points: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    /// Completed (non-aborted) episodes.
    pub n_episodes: usize,
    pub abort_count: usize,
    pub avg_final_score: Option<f64>,
    pub success_rate: Option<f64>,
    pub revision_ratio_by_stage: Option<Vec<StageCount>>,
    pub difficulty_buckets: Option<Vec<Bucket>>,
    pub series: Vec<SeriesEntry>,
}

impl EnvMetrics {
    pub fn compute(mut trajs: Vec<Trajectory>, abort_count: usize) -> Self {
        trajs.sort_by(|a, b| (&a.instruction.task_id, a.round).cmp(&(&b.instruction.task_id, b.round)));
        Self {
            n_episodes: trajs.len(),
            abort_count,
            avg_final_score: avg_final_score(&trajs).ok(),
            success_rate: success_rate(&trajs).ok(),
            revision_ratio_by_stage: revision_ratio(&trajs).ok().filter(|_| !trajs.is_empty()),
            difficulty_buckets: difficulty_buckets(&trajs).ok(),
            series: trajs
                .iter()
                .filter_map(|t| {
                    cumulative_series(t).ok().map(|points| SeriesEntry {
                        task_id: t.instruction.task_id.clone(),
                        round: t.round,
                        points,
                    })
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_episodes: usize,
    pub abort_count: usize,
    /// Log files that could not be parsed.
    pub corrupt: usize,
    pub envs: BTreeMap<String, EnvMetrics>,
}

impl MetricsReport {
    pub fn from_logs(logs: &LogCollection) -> Self {
        let mut by_env: BTreeMap<String, (Vec<Trajectory>, usize)> = BTreeMap::new();
        for ep in &logs.episodes {
            let slot = by_env.entry(ep.trajectory.instruction.env_id.clone()).or_default();
            if ep.is_completed() && !ep.trajectory.is_empty() {
                slot.0.push(ep.trajectory.clone());
            } else {
                slot.1 += 1;
            }
        }
        let envs: BTreeMap<String, EnvMetrics> = by_env
            .into_iter()
            .map(|(env, (trajs, aborted))| (env, EnvMetrics::compute(trajs, aborted)))
            .collect();
        Self {
            n_episodes: envs.values().map(|m| m.n_episodes).sum(),
            abort_count: envs.values().map(|m| m.abort_count).sum(),
            corrupt: logs.corrupt.len(),
            envs,
        }
    }
}

/// Aggregate over every run plus the per-run reports, keyed by directory
/// name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregate: MetricsReport,
    pub runs: BTreeMap<String, MetricsReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct LogCollection {
    pub episodes: Vec<LoggedEpisode>,
    pub corrupt: Vec<PathBuf>,
}

fn jsonl_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

/// Reads the trajectory logs of a run directory (`round_<k>/trajectories/`
/// in round order), or the `.jsonl` files directly inside `dir` when it has
/// no round folders. Expert replays are not included.
pub fn collect_logs(dir: &Path) -> std::io::Result<LogCollection> {
    if !dir.is_dir() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        ));
    }
    let mut rounds: Vec<(u32, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let k: u32 = name.strip_prefix("round_")?.parse().ok()?;
            Some((k, e.path().join("trajectories")))
        })
        .collect();
    rounds.sort();
    let files: Vec<PathBuf> = if rounds.is_empty() {
        jsonl_files(dir)
    } else {
        rounds.iter().flat_map(|(_, d)| jsonl_files(d)).collect()
    };
    let mut logs = LogCollection::default();
    for path in files {
        match read_log(&path) {
            Ok(ep) => logs.episodes.push(ep),
            Err(e) => {
                log::warn!("skipping corrupt log {}: {e}", path.display());
                logs.corrupt.push(path);
            }
        }
    }
    Ok(logs)
}

/// Evaluates run directories: one report per run and one over all of them.
pub fn evaluate_runs(dirs: &[PathBuf]) -> std::io::Result<EvalReport> {
    let mut all = LogCollection::default();
    let mut runs = BTreeMap::new();
    for dir in dirs {
        let logs = collect_logs(dir)?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        runs.insert(name, MetricsReport::from_logs(&logs));
        all.episodes.extend(logs.episodes);
        all.corrupt.extend(logs.corrupt);
    }
    Ok(EvalReport {
        aggregate: MetricsReport::from_logs(&all),
        runs,
    })
}
