use std::collections::BTreeMap;
use std::fmt;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::trajectory::{read_records, write_records, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub name: String,
    pub episodes: usize,
    pub steps: usize,
    pub splits: BTreeMap<String, usize>,
    pub domains: BTreeMap<String, usize>,
    /// Activation dimension per layer.
    pub activation_dims: BTreeMap<u32, usize>,
    pub steps_with_reward: usize,
    pub steps_with_oracle: usize,
    pub episodes_with_final_reward: usize,
}

impl CorpusSummary {
    pub fn of(name: &str, corpus: &[Trajectory]) -> Self {
        let mut s = Self {
            name: name.to_string(),
            episodes: corpus.len(),
            steps: 0,
            splits: BTreeMap::new(),
            domains: BTreeMap::new(),
            activation_dims: BTreeMap::new(),
            steps_with_reward: 0,
            steps_with_oracle: 0,
            episodes_with_final_reward: 0,
        };
        for tr in corpus {
            *s.splits.entry(tr.task.split.as_str().to_string()).or_default() += 1;
            *s.domains.entry(tr.task.domain_tag.clone()).or_default() += 1;
            s.episodes_with_final_reward += usize::from(tr.final_reward().is_some());
            for step in tr.steps() {
                s.steps += 1;
                s.steps_with_reward += usize::from(step.reward.is_some());
                s.steps_with_oracle += usize::from(step.oracle_success.is_some());
                for (&layer, v) in &step.activations {
                    s.activation_dims.insert(layer, v.dim());
                }
            }
        }
        s
    }
}

impl fmt::Display for CorpusSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset            {}", self.name)?;
        writeln!(f, "episodes           {}", self.episodes)?;
        writeln!(f, "steps              {}", self.steps)?;
        for (split, n) in &self.splits {
            writeln!(f, "  split {split:<12} {n}")?;
        }
        for (domain, n) in &self.domains {
            writeln!(f, "  domain {domain:<11} {n}")?;
        }
        let dims: Vec<String> = self.activation_dims.iter().map(|(l, d)| format!("L{l}:{d}")).collect();
        writeln!(f, "activation dims    {}", if dims.is_empty() { "none".into() } else { dims.join(" ") })?;
        writeln!(f, "steps with r_t     {}", self.steps_with_reward)?;
        writeln!(f, "steps with oracle  {}", self.steps_with_oracle)?;
        writeln!(f, "final rewards      {}", self.episodes_with_final_reward)
    }
}

/// Validates a record file and registers it as `datasets/<name>.jsonl`
/// under `output_dir`, with a summary alongside.
pub fn ingest(path: &Path, output_dir: &Path, name: &str) -> Result<(CorpusSummary, PathBuf), PipelineError> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(PipelineError::Validation(format!("dataset name {name:?} must be [A-Za-z0-9_-]+")));
    }
    let file = std::fs::File::open(path).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    let corpus = read_records(BufReader::new(file)).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let summary = CorpusSummary::of(name, &corpus);
    let dir = output_dir.join("datasets");
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    let target = dir.join(format!("{name}.jsonl"));
    let out = std::fs::File::create(&target).map_err(|e| PipelineError::Io(format!("{}: {e}", target.display())))?;
    write_records(&corpus, std::io::BufWriter::new(out)).map_err(|e| PipelineError::Io(e.to_string()))?;
    let meta = dir.join(format!("{name}.summary.json"));
    std::fs::write(&meta, serde_json::to_string_pretty(&summary).expect("serializable") + "\n")
        .map_err(|e| PipelineError::Io(format!("{}: {e}", meta.display())))?;
    Ok((summary, target))
}
