use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{read_records, DatasetError};
use crate::trajectory::read_log;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub logs: usize,
    pub files: usize,
    pub records_checked: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

struct LoggedOutcome {
    reward: Option<f64>,
    completed: bool,
    steps: usize,
}

fn sorted_entries(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    out.sort();
    out
}

/// Directories of a run that hold a `trajectories/` and/or `datasets/`
/// folder: `expert/` and every `round_<k>/`.
fn stage_dirs(run_dir: &Path) -> Vec<PathBuf> {
    sorted_entries(run_dir)
        .into_iter()
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n == "expert" || n.starts_with("round_"))
        })
        .collect()
}

/// Checks that every record with provenance in the run's dataset files
/// points at a logged trajectory of the same run that completed with final
/// reward exactly 1, and at a step that exists in it.
pub fn audit_run(run_dir: &Path) -> Result<AuditReport, DatasetError> {
    let run_id = run_dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    let mut report = AuditReport::default();
    let mut outcomes: BTreeMap<(u32, String), LoggedOutcome> = BTreeMap::new();
    let stages = stage_dirs(run_dir);

    for stage in &stages {
        for path in sorted_entries(&stage.join("trajectories")) {
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            report.logs += 1;
            match read_log(&path) {
                Ok(ep) => {
                    let key = (ep.trajectory.round, ep.trajectory.instruction.task_id.clone());
                    outcomes.insert(
                        key,
                        LoggedOutcome {
                            reward: ep.recorded_reward,
                            completed: ep.is_completed(),
                            steps: ep.trajectory.len(),
                        },
                    );
                }
                Err(e) => report
                    .violations
                    .push(format!("{}: unreadable log: {e}", path.display())),
            }
        }
    }

    for stage in &stages {
        for path in sorted_entries(&stage.join("datasets")) {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if !name.ends_with(".json") || name.starts_with("manifest") {
                continue;
            }
            report.files += 1;
            for (i, record) in read_records(&path)?.iter().enumerate() {
                let Some(p) = &record.provenance else {
                    continue;
                };
                report.records_checked += 1;
                let at = || format!("{name}[{i}] ({} round {})", p.task_id, p.round);
                if p.run_id != run_id {
                    report.violations.push(format!("{}: run id {:?}", at(), p.run_id));
                    continue;
                }
                match outcomes.get(&(p.round, p.task_id.clone())) {
                    None => report.violations.push(format!("{}: no trajectory log", at())),
                    Some(o) if !o.completed || o.reward != Some(1.0) => {
                        report.violations.push(format!("{}: final reward {:?}", at(), o.reward))
                    }
                    Some(o) if p.step.is_some_and(|s| s >= o.steps) => {
                        report
                            .violations
                            .push(format!("{}: step {:?} beyond {} steps", at(), p.step, o.steps))
                    }
                    Some(_) => {}
                }
            }
        }
    }
    Ok(report)
}
