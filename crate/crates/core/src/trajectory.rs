//! Instructions, actions, observations and trajectories shared by every
//! other part of the crate, plus the newline-delimited trajectory log.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::Critique;
use crate::policy::parse_thought_action;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("cannot append a step after the episode terminated")]
    AppendAfterDone,
    #[error("step index {got} does not follow trajectory length {expected}")]
    IndexGap { expected: usize, got: usize },
    #[error("trajectory already holds the maximum of {0} steps")]
    MaxStepsExceeded(usize),
    #[error("history prefix {upto} exceeds trajectory length {len}")]
    OutOfRange { upto: usize, len: usize },
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("invalid instruction: {0}")]
    InvalidInstruction(String),
    #[error("critique list has {critiques} entries for {candidates} candidates")]
    CritiqueCountMismatch { candidates: usize, critiques: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub task_id: String,
    pub env_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_path: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_length: Option<usize>,
}

impl Instruction {
    pub fn new(
        task_id: impl Into<String>,
        env_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Result<Self, TrajectoryError> {
        let task_id = task_id.into();
        if task_id.is_empty() {
            return Err(TrajectoryError::InvalidInstruction("empty task_id".into()));
        }
        Ok(Self {
            task_id,
            env_id: env_id.into(),
            text: text.into(),
            gold_path: None,
            oracle_length: None,
        })
    }

    /// Attaches a gold path and records its length as the oracle length.
    pub fn with_gold_path(mut self, gold_path: Vec<String>) -> Self {
        self.oracle_length = Some(gold_path.len());
        self.gold_path = Some(gold_path);
        self
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.task_id.is_empty() {
            return Err(TrajectoryError::InvalidInstruction("empty task_id".into()));
        }
        if let (Some(path), Some(len)) = (&self.gold_path, self.oracle_length) {
            if path.len() != len {
                return Err(TrajectoryError::InvalidInstruction(format!(
                    "oracle_length {len} differs from gold path length {}",
                    path.len()
                )));
            }
        }
        if self.oracle_length == Some(0) {
            return Err(TrajectoryError::InvalidInstruction(
                "oracle_length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A parsed model output. `raw` is kept verbatim so datasets can reproduce
/// the exact assistant turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub thought: String,
    pub command: String,
    pub raw: String,
}

impl AgentAction {
    /// Parses a raw model output. Outputs without an `Action:` marker fall
    /// back to using the whole text as the command.
    pub fn from_raw(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        match parse_thought_action(&raw) {
            Ok(action) => action,
            Err(fallback) => fallback.action,
        }
    }

    /// Builds the canonical `Thought: ...\nAction: ...` form.
    pub fn compose(thought: &str, command: &str) -> Self {
        Self {
            thought: thought.to_string(),
            command: command.to_string(),
            raw: format!("Thought: {thought}\nAction: {command}"),
        }
    }
}

/// Lowercases and collapses whitespace; the equivalence used when comparing
/// commands across candidates, critiques and gold paths.
pub fn normalize_command(command: &str) -> String {
    command
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    /// Cumulative task score after the step.
    pub score: f64,
    pub done: bool,
}

impl Observation {
    pub fn new(text: impl Into<String>, score: f64, done: bool) -> Result<Self, TrajectoryError> {
        if !(0.0..=1.0).contains(&score) || score.is_nan() {
            return Err(TrajectoryError::ScoreOutOfRange(score));
        }
        Ok(Self {
            text: text.into(),
            score,
            done,
        })
    }
}

/// The M sampled candidates for one step and, once criticised, one critique
/// per candidate in the same order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateBuffer {
    pub candidates: Vec<AgentAction>,
    #[serde(default)]
    pub critiques: Vec<Critique>,
}

impl CandidateBuffer {
    pub fn new(candidates: Vec<AgentAction>) -> Self {
        Self {
            candidates,
            critiques: Vec::new(),
        }
    }

    pub fn with_critiques(mut self, critiques: Vec<Critique>) -> Result<Self, TrajectoryError> {
        if critiques.len() != self.candidates.len() {
            return Err(TrajectoryError::CritiqueCountMismatch {
                candidates: self.candidates.len(),
                critiques: critiques.len(),
            });
        }
        self.critiques = critiques;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn is_criticised(&self) -> bool {
        !self.critiques.is_empty() && self.critiques.len() == self.candidates.len()
    }

    /// The no-critique baseline: the first sampled candidate.
    pub fn baseline(&self) -> Option<&AgentAction> {
        self.candidates.first()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub candidates: CandidateBuffer,
    pub refined_action: AgentAction,
    pub observation: Observation,
}

impl Step {
    /// True when the executed action differs from the baseline candidate.
    pub fn is_revised(&self) -> Option<bool> {
        self.candidates
            .baseline()
            .map(|base| normalize_command(&base.command) != normalize_command(&self.refined_action.command))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instruction: Instruction,
    pub steps: Vec<Step>,
    pub seed: u64,
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Trajectory {
    pub fn new(instruction: Instruction, seed: u64, round: u32) -> Self {
        Self {
            instruction,
            steps: Vec::new(),
            seed,
            round,
            max_steps: None,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = Some(max_steps);
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.steps.last().is_some_and(|s| s.observation.done)
    }

    /// Returns a copy of this trajectory extended by `step`.
    pub fn append_step(&self, step: Step) -> Result<Self, TrajectoryError> {
        if self.is_terminated() {
            return Err(TrajectoryError::AppendAfterDone);
        }
        if step.index != self.steps.len() {
            return Err(TrajectoryError::IndexGap {
                expected: self.steps.len(),
                got: step.index,
            });
        }
        if let Some(max) = self.max_steps {
            if self.steps.len() >= max {
                return Err(TrajectoryError::MaxStepsExceeded(max));
            }
        }
        if !(0.0..=1.0).contains(&step.observation.score) {
            return Err(TrajectoryError::ScoreOutOfRange(step.observation.score));
        }
        let mut next = self.clone();
        next.steps.push(step);
        Ok(next)
    }

    /// Instruction followed by the first `upto` refined actions (raw form)
    /// and their observations.
    pub fn render_history(&self, upto: usize) -> Result<String, TrajectoryError> {
        if upto > self.steps.len() {
            return Err(TrajectoryError::OutOfRange {
                upto,
                len: self.steps.len(),
            });
        }
        let mut out = self.instruction.text.clone();
        for step in &self.steps[..upto] {
            out.push_str("\n\n");
            out.push_str(&step.refined_action.raw);
            out.push_str("\nObservation: ");
            out.push_str(&step.observation.text);
        }
        Ok(out)
    }

    pub fn final_reward(&self) -> Result<f64, TrajectoryError> {
        self.steps
            .last()
            .map(|s| s.observation.score)
            .ok_or(TrajectoryError::EmptyTrajectory)
    }

    /// Refined commands executed so far, in order.
    pub fn executed_commands(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.refined_action.command.clone()).collect()
    }
}

// ---------------------------------------------------------------------------
// Trajectory log files

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("log is malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub task_id: String,
    pub env_id: String,
    pub seed: u64,
    pub round: u32,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_path: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogStep {
    t: usize,
    candidates: Vec<AgentAction>,
    critiques: Vec<Critique>,
    action: AgentAction,
    observation: String,
    score: f64,
    done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogFooter {
    final_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aborted: Option<String>,
}

impl LogHeader {
    pub fn for_trajectory(traj: &Trajectory) -> Self {
        Self {
            task_id: traj.instruction.task_id.clone(),
            env_id: traj.instruction.env_id.clone(),
            seed: traj.seed,
            round: traj.round,
            instruction: traj.instruction.text.clone(),
            gold_path: traj.instruction.gold_path.clone(),
            oracle_length: traj.instruction.oracle_length,
            max_steps: traj.max_steps,
        }
    }
}

/// Append-only writer: header line, one line per step, then a footer with
/// the final reward (or the abort reason).
pub struct LogWriter<W: Write> {
    out: W,
}

impl LogWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, LogError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> Result<Self, LogError> {
        write_json_line(&mut out, header)?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write_step(&mut self, step: &Step) -> Result<(), LogError> {
        let line = LogStep {
            t: step.index,
            candidates: step.candidates.candidates.clone(),
            critiques: step.candidates.critiques.clone(),
            action: step.refined_action.clone(),
            observation: step.observation.text.clone(),
            score: step.observation.score,
            done: step.observation.done,
        };
        write_json_line(&mut self.out, &line)?;
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self, final_reward: f64) -> Result<W, LogError> {
        write_json_line(
            &mut self.out,
            &LogFooter {
                final_reward: Some(final_reward),
                aborted: None,
            },
        )?;
        self.out.flush()?;
        Ok(self.out)
    }

    pub fn abort(mut self, reason: &str) -> Result<W, LogError> {
        write_json_line(
            &mut self.out,
            &LogFooter {
                final_reward: None,
                aborted: Some(reason.to_string()),
            },
        )?;
        self.out.flush()?;
        Ok(self.out)
    }
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> Result<(), LogError> {
    serde_json::to_writer(&mut *out, value).map_err(|source| LogError::Json { line: 0, source })?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Serializes a finished trajectory into log bytes.
pub fn trajectory_log_bytes(traj: &Trajectory) -> Result<Vec<u8>, LogError> {
    let mut writer = LogWriter::new(Vec::new(), &LogHeader::for_trajectory(traj))?;
    for step in &traj.steps {
        writer.write_step(step)?;
    }
    let reward = traj.final_reward().unwrap_or(0.0);
    writer.finish(reward)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeStatus {
    Completed,
    Aborted(String),
    /// No footer: the writer died mid-episode.
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedEpisode {
    pub trajectory: Trajectory,
    pub status: EpisodeStatus,
    /// Final reward recorded in the footer, if any.
    pub recorded_reward: Option<f64>,
}

impl LoggedEpisode {
    pub fn is_completed(&self) -> bool {
        self.status == EpisodeStatus::Completed
    }
}

pub fn read_log(path: &Path) -> Result<LoggedEpisode, LogError> {
    parse_log(BufReader::new(File::open(path)?))
}

pub fn parse_log<R: BufRead>(reader: R) -> Result<LoggedEpisode, LogError> {
    let mut lines = reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let (_, first) = lines.next().ok_or_else(|| LogError::Malformed("empty log".into()))?;
    let header: LogHeader = serde_json::from_str(&first?).map_err(|source| LogError::Json { line: 1, source })?;
    let mut instruction = Instruction::new(&header.task_id, &header.env_id, &header.instruction)
        .map_err(|e| LogError::Malformed(e.to_string()))?;
    instruction.gold_path = header.gold_path.clone();
    instruction.oracle_length = header.oracle_length;
    let mut traj = Trajectory::new(instruction, header.seed, header.round);
    traj.max_steps = header.max_steps;

    let mut status = EpisodeStatus::Truncated;
    let mut recorded_reward = None;
    for (idx, line) in lines {
        let line = line?;
        if status != EpisodeStatus::Truncated {
            return Err(LogError::Malformed(format!("content after footer at line {}", idx + 1)));
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|source| LogError::Json { line: idx + 1, source })?;
        if value.get("t").is_some() {
            let step: LogStep =
                serde_json::from_value(value).map_err(|source| LogError::Json { line: idx + 1, source })?;
            let observation = Observation::new(step.observation, step.score, step.done)
                .map_err(|e| LogError::Malformed(e.to_string()))?;
            let buffer = CandidateBuffer {
                candidates: step.candidates,
                critiques: step.critiques,
            };
            traj = traj
                .append_step(Step {
                    index: step.t,
                    candidates: buffer,
                    refined_action: step.action,
                    observation,
                })
                .map_err(|e| LogError::Malformed(format!("line {}: {e}", idx + 1)))?;
        } else {
            let footer: LogFooter =
                serde_json::from_value(value).map_err(|source| LogError::Json { line: idx + 1, source })?;
            match (footer.final_reward, footer.aborted) {
                (_, Some(reason)) => status = EpisodeStatus::Aborted(reason),
                (Some(r), None) => {
                    recorded_reward = Some(r);
                    status = EpisodeStatus::Completed;
                }
                (None, None) => return Err(LogError::Malformed("footer without final_reward".into())),
            }
        }
    }
    if let (Some(r), Ok(last)) = (recorded_reward, traj.final_reward()) {
        if r != last {
            return Err(LogError::Malformed(format!(
                "footer reward {r} differs from last score {last}"
            )));
        }
    }
    Ok(LoggedEpisode {
        trajectory: traj,
        status,
        recorded_reward,
    })
}
