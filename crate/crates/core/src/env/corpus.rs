use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{sample_action, PolicyProfile};
use super::repr::{feature_hash, RepresentationProvider};
use super::world::{env_step, final_reward, oracle_step_success, reset};
use super::{EnvConfig, EnvError};
use crate::seed;
use crate::trajectory::{Split, StepRecord, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedProfile {
    pub name: String,
    pub weight: f64,
    #[serde(flatten)]
    pub profile: PolicyProfile,
}

/// Fractions of a corpus assigned to each split, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    parts: Vec<(Split, f64)>,
}

impl SplitPlan {
    pub fn new(parts: Vec<(Split, f64)>) -> Result<Self, EnvError> {
        if parts.is_empty() || parts.iter().any(|(_, f)| !(*f >= 0.0)) {
            return Err(EnvError::InvalidConfig("split fractions must be non-negative".into()));
        }
        let total: f64 = parts.iter().map(|(_, f)| f).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EnvError::InvalidConfig(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        Ok(Self { parts })
    }

    pub fn single(split: Split) -> Self {
        Self { parts: vec![(split, 1.0)] }
    }

    /// Episode counts per split, apportioned by largest remainder.
    pub fn counts(&self, n: usize) -> Vec<(Split, usize)> {
        let raw: Vec<f64> = self.parts.iter().map(|(_, f)| f * n as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut left = n - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..raw.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        self.parts.iter().map(|(s, _)| *s).zip(counts).collect()
    }

    fn split_of(&self, n: usize, index: usize) -> Split {
        let mut acc = 0;
        for (split, c) in self.counts(n) {
            acc += c;
            if index < acc {
                return split;
            }
        }
        self.parts.last().expect("non-empty plan").0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRequest {
    /// Distinguishes corpora built from one environment config; part of every
    /// task id and task seed.
    pub tag: String,
    pub n_episodes: usize,
    pub splits: SplitPlan,
}

fn pick_profile(profiles: &[WeightedProfile], u: f64) -> &WeightedProfile {
    let total: f64 = profiles.iter().map(|p| p.weight).sum();
    let mut acc = 0.0;
    for p in profiles {
        acc += p.weight / total;
        if u < acc {
            return p;
        }
    }
    profiles.last().expect("at least one profile")
}

/// Generate finalized episodes with activations at every `(layer, t ≥ 1)` and
/// per-step ground truth. A pure function of its arguments.
pub fn generate_corpus(
    env: &EnvConfig,
    profiles: &[WeightedProfile],
    rep: &RepresentationProvider,
    request: &CorpusRequest,
) -> Result<Vec<Trajectory>, EnvError> {
    env.validate()?;
    if profiles.is_empty() || profiles.iter().any(|p| !(p.weight >= 0.0)) {
        return Err(EnvError::InvalidProfile("need non-negative profile weights".into()));
    }
    if profiles.iter().map(|p| p.weight).sum::<f64>() <= 0.0 {
        return Err(EnvError::InvalidProfile("profile weights sum to zero".into()));
    }
    for p in profiles {
        p.profile.validate(env.horizon)?;
    }
    let tag_key = seed::fnv1a(&request.tag);
    let n = request.n_episodes;

    (0..n)
        .into_par_iter()
        .map(|i| {
            let task_seed = seed::derive(env.seed, "task", &[tag_key, i as u64]);
            let u: f64 = seed::stream(env.seed, "profile-pick", &[tag_key, i as u64]).random();
            let chosen = pick_profile(profiles, u);
            let mut tr = run_episode(env, &chosen.profile, rep, task_seed)?;
            tr.task.id = format!("{}-{i:05}", request.tag);
            tr.task.split = request.splits.split_of(n, i);
            tr.policy = Some(chosen.name.clone());
            Ok(tr)
        })
        .collect()
}

fn run_episode(
    env: &EnvConfig,
    profile: &PolicyProfile,
    rep: &RepresentationProvider,
    task_seed: u64,
) -> Result<Trajectory, EnvError> {
    let (mut state, task, o0) = reset(env, task_seed)?;
    let mut tr = Trajectory::new(task);
    tr.push_step(StepRecord::new(0, "", "OK", o0))
        .expect("first step");
    let mut policy_rng = seed::stream(profile.seed, "policy", &[task_seed]);
    let layers: Vec<u32> = rep.layers().collect();
    let mut t = 1u32;
    while !state.terminated() {
        let (thought, action) = sample_action(profile, &tr, &state, &mut policy_rng);
        let out = env_step(&state, &action)?;
        state = out.state;
        let mut step = StepRecord::new(t, thought, action, out.observation);
        let on_path = oracle_step_success(&state);
        step.oracle_success = Some(on_path);
        tr.push_step(step).expect("monotone timesteps");

        let phi = feature_hash(&tr.text(), rep.dim());
        let mut acts = std::collections::BTreeMap::new();
        for &layer in &layers {
            let mut noise = seed::stream(
                rep.config().seed,
                "activation",
                &[task_seed, u64::from(t), u64::from(layer)],
            );
            acts.insert(layer, rep.hidden_state_from_features(&phi, layer, on_path, &mut noise)?);
        }
        if let Some(last) = tr.steps_mut().last() {
            last.activations = acts;
        }
        t += 1;
    }
    let reward = final_reward(&state)?;
    Ok(tr.finalize(reward).expect("non-empty episode with reward in range"))
}
