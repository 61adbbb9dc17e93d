//! Staged, cached orchestration of the full pipeline from one config file.
//!
//! Each stage writes one artifact under the output directory and records its
//! sha256 digest together with a cache key: the digest of the stage's config
//! section and of its upstream artifacts. A stage whose key and artifact are
//! unchanged is skipped.

pub mod config;
pub mod ingest;
pub mod manifest;
pub mod report;
pub mod stages;

use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

pub use config::{CalibrationTruth, LabelSource, PipelineConfig, SplitFractions};
pub use ingest::{ingest, CorpusSummary};
pub use manifest::{artifact_digest, RunManifest, Stage, StageRecord};
pub use stages::{LabelArtifact, ProbeArtifact, SteerArtifact};

use crate::conformal::{CalibrationStore, Thresholds};
use crate::seed;
use crate::trajectory::{read_records, write_records, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("stage {0} has no valid artifact; run it first")]
    MissingStage(Stage),
    #[error("artifact integrity: {0}")]
    Integrity(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl PipelineError {
    /// 1 for validation errors, 2 for everything that happens inside a stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    CacheHit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    dir: PathBuf,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

impl Pipeline {
    /// Validates `cfg` and resolves its per-stage seeds.
    pub fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self { cfg: cfg.resolved(), dir: cfg.output_dir.clone() })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn output_dir(&self) -> &Path {
        &self.dir
    }

    pub fn artifact_path(&self, stage: Stage) -> PathBuf {
        self.dir.join(stage.artifact())
    }

    fn manifest(&self) -> Result<RunManifest, PipelineError> {
        let mut m = RunManifest::load(&self.dir)?.unwrap_or_else(|| RunManifest::new(self.cfg.digest()));
        m.config_digest = self.cfg.digest();
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        Ok(m)
    }

    fn section(&self, stage: Stage) -> Result<serde_json::Value, PipelineError> {
        let c = &self.cfg;
        Ok(match stage {
            Stage::Generate => {
                let input = match &c.input_corpus {
                    Some(p) => Some(artifact_digest(p).map_err(|_| {
                        PipelineError::Validation(format!("input corpus {} is not readable", p.display()))
                    })?),
                    None => None,
                };
                json!({
                    "master_seed": c.master_seed, "n_episodes": c.n_episodes,
                    "n_test_episodes": c.n_test_episodes, "n_ood_episodes": c.n_ood_episodes,
                    "env": c.env, "rep": c.rep, "profiles": c.profiles, "splits": c.splits, "input": input,
                })
            }
            Stage::Reward => json!({
                "budget": c.budget, "start_timestep": c.start_timestep, "profiles": c.profiles, "env": c.env,
            }),
            Stage::Calibrate => json!({
                "min_per_cell": c.min_per_cell, "calibration_truth": c.calibration_truth,
                "start_timestep": c.start_timestep,
            }),
            Stage::Label => json!({
                "thresholds": c.thresholds, "calibration_truth": c.calibration_truth,
                "start_timestep": c.start_timestep,
            }),
            Stage::Probe => {
                let compare = if c.compare_env { Some(c.digest()) } else { None };
                json!({
                    "train": c.train, "label_source": c.label_source, "start_timestep": c.start_timestep,
                    "rep_layers": c.rep.layers, "compare": compare,
                })
            }
            Stage::Steer => json!({
                "intervention": c.intervention, "label_source": c.label_source, "env": c.env, "rep": c.rep,
                "master_seed": c.master_seed,
            }),
            Stage::Report => json!({ "config": c }),
        })
    }

    fn cache_key(&self, stage: Stage, manifest: &RunManifest) -> Result<String, PipelineError> {
        let upstream: Vec<&str> = stage
            .upstream()
            .iter()
            .map(|&u| manifest.record(u).map(|r| r.digest.as_str()).ok_or(PipelineError::MissingStage(u)))
            .collect::<Result<_, _>>()?;
        let doc = json!({ "stage": stage, "section": self.section(stage)?, "upstream": upstream });
        Ok(seed::sha256_hex(&serde_json::to_vec(&doc).expect("serializable")))
    }

    fn read_corpus(&self, stage: Stage) -> Result<Vec<Trajectory>, PipelineError> {
        let path = self.artifact_path(stage);
        let file = std::fs::File::open(&path).map_err(|e| io(&path, e))?;
        read_records(BufReader::new(file)).map_err(|e| io(&path, e))
    }

    fn write_corpus(&self, stage: Stage, corpus: &[Trajectory]) -> Result<(), PipelineError> {
        let path = self.artifact_path(stage);
        let file = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
        write_records(corpus, BufWriter::new(file)).map_err(|e| io(&path, e))?;
        Ok(())
    }

    fn read_json<T: DeserializeOwned>(&self, stage: Stage) -> Result<T, PipelineError> {
        let path = self.artifact_path(stage);
        let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| io(&path, e))
    }

    fn write_json<T: Serialize>(&self, stage: Stage, value: &T) -> Result<(), PipelineError> {
        let path = self.artifact_path(stage);
        let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
        std::fs::write(&path, text).map_err(|e| io(&path, e))
    }

    fn read_store(&self) -> Result<(CalibrationStore, Thresholds), PipelineError> {
        let path = self.artifact_path(Stage::Calibrate);
        let file = std::fs::File::open(&path).map_err(|e| io(&path, e))?;
        CalibrationStore::load(BufReader::new(file)).map_err(|e| io(&path, e))
    }

    fn execute(&self, stage: Stage) -> Result<(), PipelineError> {
        let cfg = &self.cfg;
        match stage {
            Stage::Generate => {
                let corpus = stages::generate(cfg)?;
                self.write_corpus(stage, &corpus)
            }
            Stage::Reward => {
                let mut corpus = self.read_corpus(Stage::Generate)?;
                stages::annotate_rewards(cfg, &mut corpus)?;
                self.write_corpus(stage, &corpus)
            }
            Stage::Calibrate => {
                let corpus = self.read_corpus(Stage::Reward)?;
                let store = stages::calibrate(cfg, &corpus)?;
                let path = self.artifact_path(stage);
                let file = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
                store.save(&cfg.thresholds, BufWriter::new(file)).map_err(|e| io(&path, e))
            }
            Stage::Label => {
                let corpus = self.read_corpus(Stage::Reward)?;
                let (store, _) = self.read_store()?;
                let labels = stages::label(cfg, &store, &corpus)?;
                self.write_json(stage, &labels)
            }
            Stage::Probe => {
                let corpus = self.read_corpus(Stage::Reward)?;
                let labels: LabelArtifact = self.read_json(Stage::Label)?;
                let probes = stages::probe(cfg, &corpus, &labels)?;
                self.write_json(stage, &probes)
            }
            Stage::Steer => {
                let corpus = self.read_corpus(Stage::Reward)?;
                let labels: LabelArtifact = self.read_json(Stage::Label)?;
                let probes: ProbeArtifact = self.read_json(Stage::Probe)?;
                let mut steer = stages::steer(cfg, &corpus, &labels, &probes.grid)?;
                steer.vector.source_digest = Some(artifact_digest(&self.artifact_path(Stage::Reward))?);
                self.write_json(stage, &steer)
            }
            Stage::Report => {
                let (store, _) = self.read_store()?;
                let labels: LabelArtifact = self.read_json(Stage::Label)?;
                let probes: ProbeArtifact = self.read_json(Stage::Probe)?;
                let steer: SteerArtifact = self.read_json(Stage::Steer)?;
                let bundle = report::build(cfg, &store, &labels, &probes, &steer);
                report::write(&self.artifact_path(stage), &bundle)
            }
        }
    }

    /// Runs one stage unless its cached artifact is still valid.
    pub fn run_stage(&self, stage: Stage, force: bool) -> Result<StageOutcome, PipelineError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| io(&self.dir, e))?;
        let mut manifest = self.manifest()?;
        for &up in stage.upstream() {
            if !manifest.is_intact(&self.dir, up) {
                return Err(PipelineError::MissingStage(up));
            }
        }
        let key = self.cache_key(stage, &manifest)?;
        let cached = manifest.record(stage).is_some_and(|r| r.cache_key == key);
        if !force && cached && manifest.is_intact(&self.dir, stage) {
            manifest.save(&self.dir)?;
            return Ok(StageOutcome { stage, status: StageStatus::CacheHit });
        }
        let started_at = now();
        self.execute(stage)?;
        let digest = artifact_digest(&self.artifact_path(stage))?;
        manifest.upsert(StageRecord {
            stage,
            artifact: PathBuf::from(stage.artifact()),
            digest,
            cache_key: key,
            started_at,
            finished_at: now(),
        });
        manifest.save(&self.dir)?;
        Ok(StageOutcome { stage, status: StageStatus::Ran })
    }

    /// All stages in order.
    pub fn run(&self, force: bool) -> Result<(RunManifest, Vec<StageOutcome>), PipelineError> {
        let outcomes = Stage::ALL
            .iter()
            .map(|&s| self.run_stage(s, force))
            .collect::<Result<Vec<_>, _>>()?;
        let manifest = self.manifest()?;
        manifest.verify(&self.dir)?;
        Ok((manifest, outcomes))
    }
}
