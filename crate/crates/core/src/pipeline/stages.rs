//! In-memory stage computations. The orchestrator in the parent module only
//! adds persistence and caching around these.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CalibrationTruth, LabelSource, PipelineConfig};
use super::PipelineError;
use crate::conformal::{self, AuditReport, CalibrationStore, Label, LabeledStep};
use crate::env::{generate_corpus, CorpusRequest, EnvKind, PolicyProfile, RepresentationProvider, SplitPlan};
use crate::probe::{self, MetricsGrid, ProbeGrid, StepLabeler};
use crate::reward::estimate_trajectory_rewards;
use crate::stats;
use crate::steering::{self, InterventionSpec, SteeringResult, SteeringVector};
use crate::trajectory::{read_records, Split, StepRecord, Trajectory};

fn stage_err(stage: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage { stage: stage.to_string(), message: e.to_string() }
}

/// Episodes for every split: train / calibration / probe-train from one
/// request, then in-distribution and shifted-vocabulary test sets.
pub fn generate(cfg: &PipelineConfig) -> Result<Vec<Trajectory>, PipelineError> {
    if let Some(path) = &cfg.input_corpus {
        let file = std::fs::File::open(path).map_err(|e| stage_err("generate", format!("{}: {e}", path.display())))?;
        return read_records(std::io::BufReader::new(file)).map_err(|e| stage_err("generate", e));
    }
    let rep = RepresentationProvider::new(&cfg.rep).map_err(|e| stage_err("generate", e))?;
    let kind = cfg.kind().as_str();
    let plan = cfg.splits.plan()?;
    let mut corpus = Vec::new();
    let requests = [
        (cfg.env.clone(), kind.to_string(), cfg.n_episodes, plan),
        (cfg.env.clone(), format!("{kind}-test"), cfg.n_test_episodes, SplitPlan::single(Split::TestId)),
        (cfg.ood_env(), format!("{kind}-ood"), cfg.n_ood_episodes, SplitPlan::single(Split::TestOod)),
    ];
    for (env, tag, n_episodes, splits) in requests {
        let request = CorpusRequest { tag, n_episodes, splits };
        corpus.extend(generate_corpus(&env, &cfg.profiles, &rep, &request).map_err(|e| stage_err("generate", e))?);
    }
    Ok(corpus)
}

fn needs_rewards(split: Split) -> bool {
    split != Split::Train
}

fn rollout_policy<'a>(cfg: &'a PipelineConfig, traj: &Trajectory) -> Result<&'a PolicyProfile, PipelineError> {
    match &traj.policy {
        Some(name) => cfg
            .profiles
            .iter()
            .find(|p| &p.name == name)
            .map(|p| &p.profile)
            .ok_or_else(|| stage_err("reward", format!("{}: unknown policy {name:?}", traj.task.id))),
        None if cfg.profiles.len() == 1 => Ok(&cfg.profiles[0].profile),
        None => Err(stage_err("reward", format!("{}: no policy recorded", traj.task.id))),
    }
}

/// Attaches `r_t` to every step from `start_timestep` on, outside the train
/// split. Steps that already carry a reward are kept.
pub fn annotate_rewards(cfg: &PipelineConfig, corpus: &mut [Trajectory]) -> Result<(), PipelineError> {
    corpus
        .par_iter_mut()
        .filter(|tr| needs_rewards(tr.task.split))
        .try_for_each(|tr| {
            let start = cfg.start_timestep;
            if tr.steps().iter().filter(|s| s.t >= start).all(|s| s.reward.is_some()) {
                return Ok(());
            }
            let policy = rollout_policy(cfg, tr)?;
            let env = cfg.env_for(tr.task.split);
            let estimates = estimate_trajectory_rewards(tr, policy, &env, &cfg.budget, start)
                .map_err(|e| stage_err("reward", format!("{}: {e}", tr.task.id)))?;
            let by_t: HashMap<u32, f64> = estimates.iter().map(|e| (e.t, e.r_t)).collect();
            for step in tr.steps_mut() {
                if let Some(&r) = by_t.get(&step.t) {
                    step.reward = Some(r);
                }
            }
            Ok(())
        })
}

fn episode_success(cfg: &PipelineConfig, traj: &Trajectory) -> Option<bool> {
    traj.outcome(cfg.env_for(traj.task.split).success_threshold()).map(|o| o.success)
}

/// Ground truth for one step under the configured convention.
pub fn step_truth(cfg: &PipelineConfig, traj: &Trajectory, step: &StepRecord) -> Option<bool> {
    match cfg.calibration_truth {
        CalibrationTruth::Oracle => step.oracle_success.or_else(|| episode_success(cfg, traj)),
        CalibrationTruth::FinalOutcome => episode_success(cfg, traj),
    }
}

fn labeled_steps(cfg: &PipelineConfig, corpus: &[Trajectory], split: Split) -> Vec<LabeledStep> {
    corpus
        .iter()
        .filter(|tr| tr.task.split == split)
        .flat_map(|tr| {
            tr.steps().iter().filter(|s| s.t >= cfg.start_timestep).filter_map(move |s| {
                Some(LabeledStep { t: s.t, r_t: s.reward?, outcome: step_truth(cfg, tr, s)? })
            })
        })
        .collect()
}

pub fn calibrate(cfg: &PipelineConfig, corpus: &[Trajectory]) -> Result<CalibrationStore, PipelineError> {
    conformal::calibrate(labeled_steps(cfg, corpus, Split::Calibration), cfg.min_per_cell)
        .map_err(|e| stage_err("calibrate", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLabelRecord {
    pub task_id: String,
    pub t: u32,
    pub label: Label,
    pub p_s: f64,
    pub p_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelArtifact {
    pub labels: Vec<StepLabelRecord>,
    /// Audit of the test-id split against step ground truth.
    pub audit_pooled: AuditReport,
    pub audit_by_timestep: BTreeMap<u32, AuditReport>,
    /// Timesteps labeled with the pooled fallback.
    pub pooled_timesteps: Vec<u32>,
}

impl LabelArtifact {
    pub fn lookup(&self) -> HashMap<(String, u32), Label> {
        self.labels.iter().map(|r| ((r.task_id.clone(), r.t), r.label)).collect()
    }
}

pub fn label(cfg: &PipelineConfig, store: &CalibrationStore, corpus: &[Trajectory]) -> Result<LabelArtifact, PipelineError> {
    let wanted = [Split::ProbeTrain, Split::TestId, Split::TestOod];
    let mut labels = Vec::new();
    let mut used_t = BTreeSet::new();
    for tr in corpus.iter().filter(|tr| wanted.contains(&tr.task.split)) {
        for s in tr.steps().iter().filter(|s| s.t >= cfg.start_timestep) {
            let Some(r) = s.reward else { continue };
            let l = conformal::label_step(r, s.t, store, &cfg.thresholds).map_err(|e| stage_err("label", e))?;
            used_t.insert(s.t);
            labels.push(StepLabelRecord {
                task_id: tr.task.id.clone(),
                t: s.t,
                label: l.value,
                p_s: l.pvalues.p_s,
                p_f: l.pvalues.p_f,
            });
        }
    }
    let heldout = labeled_steps(cfg, corpus, Split::TestId);
    let audit_pooled =
        conformal::audit_error_rates(store, &cfg.thresholds, &heldout).map_err(|e| stage_err("label", e))?;
    let audit_by_timestep =
        conformal::audit_by_timestep(store, &cfg.thresholds, &heldout).map_err(|e| stage_err("label", e))?;
    let pooled_timesteps = used_t.into_iter().filter(|&t| store.cell(t).1).collect();
    Ok(LabelArtifact { labels, audit_pooled, audit_by_timestep, pooled_timesteps })
}

/// Labeler backed by conformal labels; Abstain and unlabeled steps are excluded.
pub struct ConformalLabels(pub HashMap<(String, u32), Label>);

impl StepLabeler for ConformalLabels {
    fn label(&self, traj: &Trajectory, step: &StepRecord) -> Option<bool> {
        match self.0.get(&(traj.task.id.clone(), step.t))? {
            Label::Success => Some(true),
            Label::Failure => Some(false),
            Label::Abstain => None,
        }
    }
}

pub fn training_labeler(cfg: &PipelineConfig, labels: &LabelArtifact) -> Box<dyn StepLabeler> {
    match cfg.label_source {
        LabelSource::Conformal => Box::new(ConformalLabels(labels.lookup())),
        LabelSource::Oracle => Box::new(probe::oracle_labels),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub primary: EnvKind,
    pub primary_mean_accuracy: Option<f64>,
    pub other: EnvKind,
    pub other_mean_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeArtifact {
    pub grid: ProbeGrid,
    pub id_conformal: MetricsGrid,
    pub id_oracle: Option<MetricsGrid>,
    pub ood_conformal: Option<MetricsGrid>,
    pub ood_oracle: Option<MetricsGrid>,
    pub comparison: Option<Comparison>,
}

fn split_of(corpus: &[Trajectory], split: Split) -> Vec<Trajectory> {
    corpus.iter().filter(|t| t.task.split == split).cloned().collect()
}

fn has_oracle(corpus: &[Trajectory]) -> bool {
    corpus.iter().any(|t| t.steps().iter().any(|s| s.oracle_success.is_some()))
}

pub fn layers_of(cfg: &PipelineConfig, corpus: &[Trajectory]) -> Vec<u32> {
    if cfg.input_corpus.is_some() {
        probe::corpus_layers(corpus)
    } else {
        cfg.rep.layers.clone()
    }
}

/// Probe grid on the probe-train split, scored on both test splits.
pub fn probe(cfg: &PipelineConfig, corpus: &[Trajectory], labels: &LabelArtifact) -> Result<ProbeArtifact, PipelineError> {
    let train = split_of(corpus, Split::ProbeTrain);
    let labeler = training_labeler(cfg, labels);
    let grid = probe::train_grid(&train, labeler.as_ref(), &layers_of(cfg, corpus), &cfg.timesteps(), &cfg.train)
        .map_err(|e| stage_err("probe", e))?;
    let conformal_labels = ConformalLabels(labels.lookup());
    let eval = |split: Split| {
        let test = split_of(corpus, split);
        if test.is_empty() {
            return (None, None);
        }
        let c = probe::evaluate(&grid, &test, &conformal_labels);
        let o = has_oracle(&test).then(|| probe::evaluate(&grid, &test, &probe::oracle_labels));
        (Some(c), o)
    };
    let (id_conformal, id_oracle) = eval(Split::TestId);
    let (ood_conformal, ood_oracle) = eval(Split::TestOod);
    let id_conformal = id_conformal.ok_or_else(|| stage_err("probe", "test-id split is empty"))?;
    let comparison = if cfg.compare_env && cfg.input_corpus.is_none() {
        let other = cfg.counterpart();
        Some(Comparison {
            primary: cfg.kind(),
            primary_mean_accuracy: id_conformal.summary().mean_accuracy,
            other: other.kind(),
            other_mean_accuracy: mean_probe_accuracy(&other)?,
        })
    } else {
        None
    };
    Ok(ProbeArtifact { grid, id_conformal, id_oracle, ood_conformal, ood_oracle, comparison })
}

/// Runs generate through probe in memory and returns the mean test-id
/// accuracy against conformal test labels.
pub fn mean_probe_accuracy(cfg: &PipelineConfig) -> Result<Option<f64>, PipelineError> {
    let mut corpus = generate(cfg)?;
    annotate_rewards(cfg, &mut corpus)?;
    let store = calibrate(cfg, &corpus)?;
    let labels = label(cfg, &store, &corpus)?;
    let cfg = PipelineConfig { compare_env: false, ..cfg.clone() };
    Ok(probe(&cfg, &corpus, &labels)?.id_conformal.summary().mean_accuracy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerArtifact {
    pub spec: InterventionSpec,
    pub vector: SteeringVector,
    /// Cosine between the vector and the provider's ground-truth direction.
    pub cosine_to_truth: Option<f64>,
    pub result: Option<SteeringResult>,
    pub note: Option<String>,
}

/// The configured layer, or the layer whose probe validated best at `t`.
pub fn choose_layer(cfg: &PipelineConfig, grid: &ProbeGrid, t: u32) -> Result<u32, PipelineError> {
    if let Some(l) = cfg.intervention.layer {
        return Ok(l);
    }
    grid.layers
        .iter()
        .filter_map(|&l| grid.trained(crate::trajectory::ActivationKey::new(l, t)).map(|p| (l, p.validation.accuracy)))
        .fold(None, |best: Option<(u32, f64)>, (l, a)| match best {
            Some((_, b)) if b >= a => best,
            _ => Some((l, a)),
        })
        .map(|(l, _)| l)
        .ok_or_else(|| stage_err("steer", format!("no trained probe at t={t} to choose a layer from")))
}

pub fn steer(
    cfg: &PipelineConfig,
    corpus: &[Trajectory],
    labels: &LabelArtifact,
    grid: &ProbeGrid,
) -> Result<SteerArtifact, PipelineError> {
    let iv = &cfg.intervention;
    let t0 = *iv.timesteps.iter().min().expect("validated non-empty");
    let layer = choose_layer(cfg, grid, t0)?;
    let train = split_of(corpus, Split::ProbeTrain);
    let labeler = training_labeler(cfg, labels);
    let vector = steering::direction_from_corpus(&train, labeler.as_ref(), layer, t0, steering::DEFAULT_MIN_PER_CLASS)
        .map_err(|e| stage_err("steer", e))?;
    let spec = InterventionSpec { layer, timesteps: iv.timesteps.iter().copied().collect(), coefficient: iv.coefficient };
    if cfg.input_corpus.is_some() {
        return Ok(SteerArtifact {
            spec,
            vector,
            cosine_to_truth: None,
            result: None,
            note: Some("closed-loop evaluation needs a synthetic environment; skipped for ingested corpora".into()),
        });
    }
    let rep = RepresentationProvider::new(&cfg.rep).map_err(|e| stage_err("steer", e))?;
    let g = rep.direction(layer).map_err(|e| stage_err("steer", e))?;
    let cosine_to_truth = Some(stats::cosine(&vector.d, g));
    let result = steering::closed_loop_eval(&cfg.env, &rep, &iv.agent, &spec, &vector, iv.n_episodes, cfg.steer_seed())
        .map_err(|e| stage_err("steer", e))?;
    Ok(SteerArtifact { spec, vector, cosine_to_truth, result: Some(result), note: None })
}
