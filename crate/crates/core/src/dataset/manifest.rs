use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{records_to_json, DatasetError, DatasetRecord, MixOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixCounts {
    pub beta: f64,
    pub seed: u64,
    pub n: usize,
    pub agentic: usize,
    pub general: usize,
    pub capped: bool,
}

impl MixCounts {
    pub fn new(beta: f64, seed: u64, outcome: &MixOutcome) -> Self {
        Self {
            beta,
            seed,
            n: outcome.n,
            agentic: outcome.agentic,
            general: outcome.general,
            capped: outcome.capped,
        }
    }
}

/// Record counts per environment and pool, plus the size and checksum of
/// every emitted file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
    pub files: BTreeMap<String, FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<MixCounts>,
}

pub fn file_checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(run_id: Option<String>, round: Option<u32>) -> Self {
        Self {
            run_id,
            round,
            ..Self::default()
        }
    }

    /// Writes `records` to `dir/name` and registers the file. With
    /// `count_pools` the records also feed the per-env, per-pool counts.
    pub fn emit(
        &mut self,
        dir: &Path,
        name: &str,
        records: &[DatasetRecord],
        count_pools: bool,
    ) -> Result<(), DatasetError> {
        fs::create_dir_all(dir)?;
        let text = records_to_json(records);
        fs::write(dir.join(name), &text)?;
        self.files.insert(
            name.to_string(),
            FileEntry {
                records: records.len(),
                sha256: file_checksum(text.as_bytes()),
            },
        );
        if count_pools {
            for r in records {
                *self
                    .counts
                    .entry(r.env_id().to_string())
                    .or_default()
                    .entry(r.pool.name().to_string())
                    .or_default() += 1;
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        fs::write(path, json)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Compares a manifest with the files next to it. Returns one message per
/// mismatch in record count (line count minus two) or checksum.
pub fn verify_manifest(path: &Path) -> Result<Vec<String>, DatasetError> {
    let manifest = Manifest::read(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut problems = Vec::new();
    for (name, entry) in &manifest.files {
        let bytes = match fs::read(dir.join(name)) {
            Ok(b) => b,
            Err(e) => {
                problems.push(format!("{name}: {e}"));
                continue;
            }
        };
        let lines = bytes.iter().filter(|&&b| b == b'\n').count();
        if lines.saturating_sub(2) != entry.records {
            problems.push(format!("{name}: {} records listed, {} lines", entry.records, lines));
        }
        if file_checksum(&bytes) != entry.sha256 {
            problems.push(format!("{name}: checksum mismatch"));
        }
    }
    Ok(problems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Pool, Turn};

    #[test]
    fn emit_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<DatasetRecord> = (0..4)
            .map(|i| DatasetRecord {
                conversations: vec![Turn::human(format!("q{i}")), Turn::gpt("a")],
                system: String::new(),
                pool: Pool::General,
                provenance: None,
            })
            .collect();
        let mut m = Manifest::new(Some("run".into()), Some(1));
        m.emit(dir.path(), "general.json", &recs, true).unwrap();
        m.emit(dir.path(), "empty.json", &[], true).unwrap();
        m.write(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(m.counts["general"]["general"], 4);
        assert!(verify_manifest(&dir.path().join("manifest.json")).unwrap().is_empty());
        fs::write(dir.path().join("general.json"), "[\n]\n").unwrap();
        assert_eq!(verify_manifest(&dir.path().join("manifest.json")).unwrap().len(), 2);
    }
}
