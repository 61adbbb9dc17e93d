//! Contrastive success directions and additive interventions, evaluated in a
//! closed loop where the agent's drift hazard reads its own hidden state.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    env_step, expert_action, feature_hash, final_reward, oracle_step_success, reset, EnvConfig,
    EnvError, RepresentationProvider,
};
use crate::probe::StepLabeler;
use crate::seed;
use crate::stats::{dot, norm, sigmoid};
use crate::trajectory::{ActivationVector, StepRecord, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteeringError {
    #[error("need at least {min} examples per class, got {n_success} success and {n_failure} failure")]
    InsufficientExamples { n_success: usize, n_failure: usize, min: usize },
    #[error("class means coincide")]
    ZeroContrast,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("intervention targets layer {spec} but the vector was built at layer {vector}")]
    LayerMismatch { spec: u32, vector: u32 },
    #[error("invalid intervention: {0}")]
    InvalidSpec(String),
    #[error("steering document: {0}")]
    Document(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub const DEFAULT_MIN_PER_CLASS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub layer: u32,
    pub d: Vec<f64>,
    pub n_success: usize,
    pub n_failure: usize,
    #[serde(default)]
    pub source_digest: Option<String>,
}

impl SteeringVector {
    pub fn save<W: std::io::Write>(&self, sink: W) -> Result<(), SteeringError> {
        serde_json::to_writer_pretty(sink, self).map_err(|e| SteeringError::Document(e.to_string()))
    }

    pub fn load<R: std::io::Read>(source: R) -> Result<Self, SteeringError> {
        let v: Self =
            serde_json::from_reader(source).map_err(|e| SteeringError::Document(e.to_string()))?;
        if (norm(&v.d) - 1.0).abs() > 1e-9 {
            return Err(SteeringError::Document("direction is not unit norm".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub layer: u32,
    pub timesteps: BTreeSet<u32>,
    pub coefficient: f64,
}

impl InterventionSpec {
    pub fn new(layer: u32) -> Self {
        Self { layer, timesteps: BTreeSet::from([3]), coefficient: 0.025 }
    }

    pub fn with_coefficient(mut self, coefficient: f64) -> Self {
        self.coefficient = coefficient;
        self
    }

    pub fn validate(&self, horizon: u32) -> Result<(), SteeringError> {
        if !self.coefficient.is_finite() {
            return Err(SteeringError::InvalidSpec("coefficient must be finite".into()));
        }
        if let Some(t) = self.timesteps.iter().find(|&&t| t > horizon) {
            return Err(SteeringError::InvalidSpec(format!("timestep {t} beyond horizon {horizon}")));
        }
        Ok(())
    }
}

fn class_mean(xs: &[&[f64]], dim: usize) -> Result<Vec<f64>, SteeringError> {
    let mut m = vec![0.0; dim];
    for x in xs {
        if x.len() != dim {
            return Err(SteeringError::DimensionMismatch { expected: dim, found: x.len() });
        }
        m.iter_mut().zip(x.iter()).for_each(|(a, v)| *a += v);
    }
    m.iter_mut().for_each(|a| *a /= xs.len() as f64);
    Ok(m)
}

/// Unit-normalized difference of class means.
pub fn compute_direction(
    success_acts: &[&[f64]],
    failure_acts: &[&[f64]],
    layer: u32,
    min_per_class: usize,
) -> Result<SteeringVector, SteeringError> {
    let (n_success, n_failure) = (success_acts.len(), failure_acts.len());
    let min = min_per_class.max(1);
    if n_success < min || n_failure < min {
        return Err(SteeringError::InsufficientExamples { n_success, n_failure, min });
    }
    let dim = success_acts[0].len();
    let ms = class_mean(success_acts, dim)?;
    let mf = class_mean(failure_acts, dim)?;
    let diff: Vec<f64> = ms.iter().zip(&mf).map(|(a, b)| a - b).collect();
    let n = norm(&diff);
    if n <= 1e-12 {
        return Err(SteeringError::ZeroContrast);
    }
    Ok(SteeringVector {
        layer,
        d: diff.into_iter().map(|v| v / n).collect(),
        n_success,
        n_failure,
        source_digest: None,
    })
}

/// Direction from the labeled activations of one (layer, timestep) cell.
pub fn direction_from_corpus(
    corpus: &[Trajectory],
    labeler: &dyn StepLabeler,
    layer: u32,
    t: u32,
    min_per_class: usize,
) -> Result<SteeringVector, SteeringError> {
    let (mut pos, mut neg): (Vec<&[f64]>, Vec<&[f64]>) = (Vec::new(), Vec::new());
    for traj in corpus {
        let Some(step) = traj.steps().iter().find(|s| s.t == t) else { continue };
        let (Some(h), Some(y)) = (step.activation(layer), labeler.label(traj, step)) else {
            continue;
        };
        if y {
            pos.push(h.values());
        } else {
            neg.push(h.values());
        }
    }
    compute_direction(&pos, &neg, layer, min_per_class)
}

/// `h + c·d` when `t` is an intervention step, otherwise `h` unchanged.
pub fn apply_intervention(
    h: &ActivationVector,
    spec: &InterventionSpec,
    vector: &SteeringVector,
    t: u32,
) -> Result<ActivationVector, SteeringError> {
    if vector.layer != spec.layer {
        return Err(SteeringError::LayerMismatch { spec: spec.layer, vector: vector.layer });
    }
    if h.dim() != vector.d.len() {
        return Err(SteeringError::DimensionMismatch { expected: vector.d.len(), found: h.dim() });
    }
    if spec.coefficient == 0.0 || !spec.timesteps.contains(&t) {
        return Ok(h.clone());
    }
    let c = spec.coefficient;
    let values = h.values().iter().zip(&vector.d).map(|(v, d)| v + c * d).collect();
    ActivationVector::new(values).map_err(|e| SteeringError::InvalidSpec(e.to_string()))
}

/// Agent that follows the expert plan but, after each step `t` in `window`,
/// drifts with probability `σ(hazard_bias − hazard_gain·⟨h_t, g_L⟩)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoupledAgent {
    pub hazard_bias: f64,
    pub hazard_gain: f64,
    pub window: (u32, u32),
}

impl Default for CoupledAgent {
    fn default() -> Self {
        Self { hazard_bias: 6.9, hazard_gain: 8.0, window: (3, 5) }
    }
}

impl CoupledAgent {
    pub fn hazard(&self, projection: f64) -> f64 {
        sigmoid(self.hazard_bias - self.hazard_gain * projection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub baseline_reward: f64,
    pub steered_reward: f64,
    pub baseline_success: bool,
    pub steered_success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringResult {
    pub baseline_success: f64,
    pub steered_success: f64,
    pub lift: f64,
    pub ci95: (f64, f64),
    pub n_episodes: usize,
    #[serde(skip)]
    pub episodes: Vec<PairedOutcome>,
}

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

fn run_coupled_episode(
    env: &EnvConfig,
    rep: &RepresentationProvider,
    agent: &CoupledAgent,
    steer: Option<(&InterventionSpec, &SteeringVector)>,
    layer: u32,
    episode: u64,
    seed_: u64,
) -> Result<f64, SteeringError> {
    let task_seed = seed::derive(seed_, "steer-task", &[episode]);
    let g = rep.direction(layer)?.to_vec();
    let (mut state, task, o0) = reset(env, task_seed)?;
    let mut tr = Trajectory::new(task);
    tr.push_step(StepRecord::new(0, "", "OK", o0)).expect("first step");
    let mut drifted: Option<String> = None;
    let mut t = 1u32;
    while !state.terminated() {
        let action = match &drifted {
            Some(a) => a.clone(),
            None => expert_action(&state).unwrap_or_else(|| "look around".to_string()),
        };
        let out = env_step(&state, &action)?;
        state = out.state;
        tr.push_step(StepRecord::new(t, "", action, out.observation)).expect("monotone");
        if drifted.is_none() && (agent.window.0..=agent.window.1).contains(&t) && !state.terminated() {
            let phi = feature_hash(&tr.text(), rep.dim());
            let mut noise = seed::stream(seed_, "steer-activation", &[episode, u64::from(t), u64::from(layer)]);
            let mut h = rep.hidden_state_from_features(&phi, layer, oracle_step_success(&state), &mut noise)?;
            if let Some((spec, vector)) = steer {
                h = apply_intervention(&h, spec, vector, t)?;
            }
            let u: f64 = seed::stream(seed_, "hazard", &[episode, u64::from(t)]).random();
            if u < agent.hazard(dot(h.values(), &g)) {
                let mut rng = seed::stream(seed_, "drift", &[episode, u64::from(t)]);
                drifted = Some(crate::env::drift_action(&state, &mut rng).1);
            }
        }
        t += 1;
    }
    Ok(final_reward(&state)?)
}

/// Paired baseline/steered evaluation over `n_episodes` shared episode seeds.
pub fn closed_loop_eval(
    env: &EnvConfig,
    rep: &RepresentationProvider,
    agent: &CoupledAgent,
    spec: &InterventionSpec,
    vector: &SteeringVector,
    n_episodes: usize,
    seed_: u64,
) -> Result<SteeringResult, SteeringError> {
    spec.validate(env.horizon)?;
    if vector.layer != spec.layer {
        return Err(SteeringError::LayerMismatch { spec: spec.layer, vector: vector.layer });
    }
    let threshold = env.success_threshold();
    let episodes: Vec<PairedOutcome> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| {
            let base = run_coupled_episode(env, rep, agent, None, spec.layer, i, seed_)?;
            let steered = run_coupled_episode(env, rep, agent, Some((spec, vector)), spec.layer, i, seed_)?;
            Ok(PairedOutcome {
                baseline_reward: base,
                steered_reward: steered,
                baseline_success: base >= threshold,
                steered_success: steered >= threshold,
            })
        })
        .collect::<Result<_, SteeringError>>()?;
    let n = episodes.len().max(1) as f64;
    let rate = |f: fn(&PairedOutcome) -> bool| episodes.iter().filter(|e| f(e)).count() as f64 / n;
    let baseline_success = rate(|e| e.baseline_success);
    let steered_success = rate(|e| e.steered_success);
    let diffs: Vec<f64> = episodes
        .iter()
        .map(|e| f64::from(u8::from(e.steered_success)) - f64::from(u8::from(e.baseline_success)))
        .collect();
    let lift = diffs.iter().sum::<f64>() / n;
    let ci95 = crate::stats::paired_bootstrap_ci(&diffs, BOOTSTRAP_RESAMPLES, seed_, 0.95);
    Ok(SteeringResult {
        baseline_success,
        steered_success,
        lift,
        ci95,
        n_episodes: episodes.len(),
        episodes,
    })
}

/// Summary counts of success and failure examples per layer at one timestep.
pub fn class_counts(
    corpus: &[Trajectory],
    labeler: &dyn StepLabeler,
    t: u32,
) -> BTreeMap<u32, (usize, usize)> {
    let mut out: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for traj in corpus {
        let Some(step) = traj.steps().iter().find(|s| s.t == t) else { continue };
        let Some(y) = labeler.label(traj, step) else { continue };
        for &layer in step.activations.keys() {
            let e = out.entry(layer).or_default();
            if y {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    out
}
