//! Evaluation quantities over trajectories: final score, success rate,
//! revision ratio by stage, difficulty terciles and cumulative series.

mod figures;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use figures::{bar_chart_svg, line_chart_svg, write_figures};
pub use report::{collect_logs, evaluate_runs, EnvMetrics, EvalReport, LogCollection, MetricsReport, SeriesEntry};

use crate::trajectory::Trajectory;

pub const STAGES: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no completed episodes")]
    NoEpisodes,
    #[error("step {step} of {task_id} has no candidates")]
    MissingCandidates { task_id: String, step: usize },
    #[error("task {0} has no oracle length")]
    MissingOracleLength(String),
    #[error("trajectory {0} is empty")]
    EmptyTrajectory(String),
}

fn final_rewards(trajs: &[Trajectory]) -> Result<Vec<f64>, MetricsError> {
    if trajs.is_empty() {
        return Err(MetricsError::NoEpisodes);
    }
    trajs
        .iter()
        .map(|t| {
            t.final_reward()
                .map_err(|_| MetricsError::EmptyTrajectory(t.instruction.task_id.clone()))
        })
        .collect()
}

pub fn avg_final_score(trajs: &[Trajectory]) -> Result<f64, MetricsError> {
    let rewards = final_rewards(trajs)?;
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// Fraction of trajectories whose final reward is exactly 1.
pub fn success_rate(trajs: &[Trajectory]) -> Result<f64, MetricsError> {
    let rewards = final_rewards(trajs)?;
    Ok(rewards.iter().filter(|&&r| r == 1.0).count() as f64 / rewards.len() as f64)
}

/// Stage (1..=5) of step `t` in a trajectory of `len` steps:
/// ceil(5 (t + 1) / len), clamped.
pub fn stage_of(t: usize, len: usize) -> usize {
    let len = len.max(1);
    (STAGES * (t + 1)).div_ceil(len).clamp(1, STAGES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: usize,
    pub revised: usize,
    pub total: usize,
    /// `None` for a stage with no steps.
    pub ratio: Option<f64>,
}

/// Pooled share of steps whose executed command differs from candidate 0,
/// per trajectory stage.
pub fn revision_ratio(trajs: &[Trajectory]) -> Result<Vec<StageCount>, MetricsError> {
    let mut counts = vec![(0usize, 0usize); STAGES];
    for traj in trajs {
        for step in &traj.steps {
            let revised = step.is_revised().ok_or_else(|| MetricsError::MissingCandidates {
                task_id: traj.instruction.task_id.clone(),
                step: step.index,
            })?;
            let slot = &mut counts[stage_of(step.index, traj.len()) - 1];
            slot.0 += usize::from(revised);
            slot.1 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, (revised, total))| StageCount {
            stage: i + 1,
            revised,
            total,
            ratio: (total > 0).then(|| revised as f64 / total as f64),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub bucket: usize,
    /// Distinct tasks in the bucket.
    pub tasks: usize,
    pub episodes: usize,
    pub avg_score: Option<f64>,
}

/// Cut points of the tercile split over sorted lengths: a length belongs
/// to bucket 1 if at most the first cut, bucket 2 if at most the second.
pub fn tercile_cuts(sorted: &[usize]) -> Option<(usize, usize)> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    Some((sorted[n.div_ceil(3) - 1], sorted[(2 * n).div_ceil(3) - 1]))
}

pub fn bucket_of(len: usize, cuts: (usize, usize)) -> usize {
    if len <= cuts.0 {
        1
    } else if len <= cuts.1 {
        2
    } else {
        3
    }
}

/// Splits tasks into oracle-length terciles (ties to the lower bucket) and
/// averages final scores per bucket.
pub fn difficulty_buckets(trajs: &[Trajectory]) -> Result<Vec<Bucket>, MetricsError> {
    let mut task_lengths = std::collections::BTreeMap::new();
    for t in trajs {
        let len = t
            .instruction
            .oracle_length
            .ok_or_else(|| MetricsError::MissingOracleLength(t.instruction.task_id.clone()))?;
        task_lengths.insert(t.instruction.task_id.as_str(), len);
    }
    let mut lengths: Vec<usize> = task_lengths.values().copied().collect();
    lengths.sort_unstable();
    let Some(cuts) = tercile_cuts(&lengths) else {
        return Err(MetricsError::NoEpisodes);
    };
    let mut buckets: Vec<(usize, Vec<f64>)> = vec![(0, Vec::new()); 3];
    for len in task_lengths.values() {
        buckets[bucket_of(*len, cuts) - 1].0 += 1;
    }
    for t in trajs {
        let len = task_lengths[t.instruction.task_id.as_str()];
        let reward = t
            .final_reward()
            .map_err(|_| MetricsError::EmptyTrajectory(t.instruction.task_id.clone()))?;
        buckets[bucket_of(len, cuts) - 1].1.push(reward);
    }
    Ok(buckets
        .into_iter()
        .enumerate()
        .map(|(i, (tasks, scores))| Bucket {
            bucket: i + 1,
            tasks,
            episodes: scores.len(),
            avg_score: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
        })
        .collect())
}

/// (step, cumulative score) for every step of the trajectory.
pub fn cumulative_series(traj: &Trajectory) -> Result<Vec<(usize, f64)>, MetricsError> {
    if traj.is_empty() {
        return Err(MetricsError::EmptyTrajectory(traj.instruction.task_id.clone()));
    }
    Ok(traj.steps.iter().map(|s| (s.index, s.observation.score)).collect())
}
