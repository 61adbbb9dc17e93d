use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Reward,
    Calibrate,
    Label,
    Probe,
    Steer,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Generate,
        Stage::Reward,
        Stage::Calibrate,
        Stage::Label,
        Stage::Probe,
        Stage::Steer,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Reward => "reward",
            Stage::Calibrate => "calibrate",
            Stage::Label => "label",
            Stage::Probe => "probe",
            Stage::Steer => "steer",
            Stage::Report => "report",
        }
    }

    /// Artifact path relative to the output directory.
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::Generate => "corpus.jsonl",
            Stage::Reward => "rewards.jsonl",
            Stage::Calibrate => "calibration.json",
            Stage::Label => "labels.json",
            Stage::Probe => "probes.json",
            Stage::Steer => "steering.json",
            Stage::Report => "report",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Generate => &[],
            Stage::Reward => &[Stage::Generate],
            Stage::Calibrate => &[Stage::Reward],
            Stage::Label => &[Stage::Reward, Stage::Calibrate],
            Stage::Probe => &[Stage::Reward, Stage::Label],
            Stage::Steer => &[Stage::Reward, Stage::Label, Stage::Probe],
            Stage::Report => &[Stage::Calibrate, Stage::Label, Stage::Probe, Stage::Steer],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub artifact: PathBuf,
    pub digest: String,
    pub cache_key: String,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_digest: String,
    pub stages: Vec<StageRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

/// sha256 of a file, or of the sorted `(relative path, file digest)` list of
/// a directory.
pub fn artifact_digest(path: &Path) -> Result<String, PipelineError> {
    if path.is_dir() {
        let mut entries = Vec::new();
        collect_files(path, path, &mut entries)?;
        entries.sort();
        let listing: String = entries.iter().map(|(p, d)| format!("{p}\t{d}\n")).collect();
        Ok(seed::sha256_hex(listing.as_bytes()))
    } else {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        Ok(seed::sha256_hex(&bytes))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, String)>) -> Result<(), PipelineError> {
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("below root").to_string_lossy().replace('\\', "/");
            out.push((rel, artifact_digest(&path)?));
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn new(config_digest: String) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest,
            stages: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("serializable") + "\n";
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn upsert(&mut self, record: StageRecord) {
        self.stages.retain(|r| r.stage != record.stage);
        self.stages.push(record);
        self.stages.sort_by_key(|r| r.stage);
    }

    /// Whether `stage`'s recorded artifact exists under `dir` and still
    /// matches its digest.
    pub fn is_intact(&self, dir: &Path, stage: Stage) -> bool {
        self.record(stage).is_some_and(|r| {
            let path = dir.join(&r.artifact);
            path.exists() && artifact_digest(&path).is_ok_and(|d| d == r.digest)
        })
    }

    /// Checks every recorded artifact against its digest.
    pub fn verify(&self, dir: &Path) -> Result<(), PipelineError> {
        for r in &self.stages {
            let path = dir.join(&r.artifact);
            if !path.exists() {
                return Err(PipelineError::Integrity(format!("{} artifact missing", r.stage)));
            }
            let d = artifact_digest(&path)?;
            if d != r.digest {
                return Err(PipelineError::Integrity(format!(
                    "{} artifact digest {d} does not match recorded {}",
                    r.stage, r.digest
                )));
            }
        }
        Ok(())
    }
}
