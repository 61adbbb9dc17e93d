//! Monte Carlo step-wise reward estimation.
//!
//! For a prefix ending at step `t` the estimate is the mean final reward of
//! `N` fresh rollouts of the policy from the replayed state. At the last
//! executed step of an episode (the environment has terminated) the estimate
//! is the episode's final reward itself and no rollouts are drawn.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    env_step, final_reward, reset, sample_action, EnvConfig, EnvError, EnvKind, EnvState,
    PolicyProfile,
};
use crate::seed;
use crate::stats;
use crate::trajectory::{StepRecord, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("rollout budget must be at least one rollout")]
    BudgetZero,
    #[error("prefix could not be replayed: {0}")]
    ReplayMismatch(String),
    #[error("prefix is empty")]
    EmptyPrefix,
    #[error("trajectory {0} is not finalized")]
    NotFinalized(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutBudget {
    pub n_rollouts: usize,
    /// Rollout length cap; defaults to the remaining horizon.
    #[serde(default)]
    pub max_rollout_steps: Option<u32>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RolloutBudget {
    fn default() -> Self {
        Self {
            n_rollouts: 8,
            max_rollout_steps: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub t: u32,
    pub r_t: f64,
    pub n_samples: usize,
    pub std_err: f64,
    pub is_final_step: bool,
}

fn text_only(traj: &Trajectory, upto: usize) -> Trajectory {
    let mut out = Trajectory::new(traj.task.clone());
    out.policy = traj.policy.clone();
    for s in &traj.steps()[..upto] {
        out.push_step(StepRecord::new(s.t, s.thought.clone(), s.action.clone(), s.observation.clone()))
            .expect("source steps are monotone");
    }
    out
}

fn replay_error(e: EnvError) -> RewardError {
    match e {
        EnvError::ReplayMismatch { .. } | EnvError::TerminatedEpisode => {
            RewardError::ReplayMismatch(e.to_string())
        }
        other => RewardError::Env(other),
    }
}

/// Replays `traj` step by step, yielding the state after each step index.
fn replay_states(env: &EnvConfig, traj: &Trajectory) -> Result<Vec<EnvState>, RewardError> {
    let task_seed = traj
        .task
        .seed
        .ok_or_else(|| RewardError::ReplayMismatch("trajectory carries no task seed".into()))?;
    let (mut state, task, o0) = reset(env, task_seed)?;
    if task.text != traj.task.text {
        return Err(RewardError::ReplayMismatch(
            "instruction differs from the regenerated task".into(),
        ));
    }
    let mut states = Vec::with_capacity(traj.len());
    for step in traj.steps() {
        if step.t == 0 {
            if step.observation != o0 {
                return Err(RewardError::ReplayMismatch("initial observation differs".into()));
            }
        } else {
            let out = env_step(&state, &step.action).map_err(replay_error)?;
            if out.observation != step.observation {
                return Err(RewardError::ReplayMismatch(format!(
                    "observation differs at t={} after {:?}",
                    step.t, step.action
                )));
            }
            state = out.state;
        }
        states.push(state.clone());
    }
    Ok(states)
}

fn rollout_reward(
    history: &Trajectory,
    state: &EnvState,
    policy: &PolicyProfile,
    budget: &RolloutBudget,
    stream_key: [u64; 3],
) -> f64 {
    let mut rng = seed::stream(budget.seed, "rollout", &stream_key);
    let mut tr = history.clone();
    let mut st = state.clone();
    let cap = budget.max_rollout_steps.unwrap_or_else(|| st.remaining_steps());
    let mut t = tr.last_step().map_or(0, |s| s.t) + 1;
    let mut taken = 0;
    while !st.terminated() && taken < cap {
        let (thought, action) = sample_action(policy, &tr, &st, &mut rng);
        let out = env_step(&st, &action).expect("active rollout");
        tr.push_step(StepRecord::new(t, thought, action, out.observation))
            .expect("monotone rollout");
        st = out.state;
        t += 1;
        taken += 1;
    }
    if st.terminated() {
        final_reward(&st).expect("terminated")
    } else {
        match st.world().config().kind {
            EnvKind::Dense => st.reward_so_far(),
            EnvKind::Sparse => 0.0,
        }
    }
}

fn estimate_at(
    history: &Trajectory,
    state: &EnvState,
    policy: &PolicyProfile,
    budget: &RolloutBudget,
) -> RewardEstimate {
    let t = history.last_step().map_or(0, |s| s.t);
    if state.terminated() {
        return RewardEstimate {
            t,
            r_t: final_reward(state).expect("terminated"),
            n_samples: 0,
            std_err: 0.0,
            is_final_step: true,
        };
    }
    let task_key = history.task.seed.unwrap_or_else(|| seed::fnv1a(&history.task.id));
    let samples: Vec<f64> = (0..budget.n_rollouts)
        .into_par_iter()
        .map(|i| rollout_reward(history, state, policy, budget, [task_key, u64::from(t), i as u64]))
        .collect();
    let n = samples.len() as f64;
    RewardEstimate {
        t,
        r_t: samples.iter().sum::<f64>() / n,
        n_samples: samples.len(),
        std_err: stats::sample_std(&samples) / n.sqrt(),
        is_final_step: false,
    }
}

/// Estimate `r_t` for the last step of `prefix`.
pub fn estimate_step_reward(
    prefix: &Trajectory,
    policy: &PolicyProfile,
    env: &EnvConfig,
    budget: &RolloutBudget,
) -> Result<RewardEstimate, RewardError> {
    if budget.n_rollouts == 0 {
        return Err(RewardError::BudgetZero);
    }
    if prefix.is_empty() {
        return Err(RewardError::EmptyPrefix);
    }
    let states = replay_states(env, prefix)?;
    let history = text_only(prefix, prefix.len());
    Ok(estimate_at(&history, states.last().expect("non-empty"), policy, budget))
}

/// Estimates for every step index from `start_step` to the final step.
pub fn estimate_trajectory_rewards(
    traj: &Trajectory,
    policy: &PolicyProfile,
    env: &EnvConfig,
    budget: &RolloutBudget,
    start_step: u32,
) -> Result<Vec<RewardEstimate>, RewardError> {
    if budget.n_rollouts == 0 {
        return Err(RewardError::BudgetZero);
    }
    if !traj.is_finalized() {
        return Err(RewardError::NotFinalized(traj.task.id.clone()));
    }
    let states = replay_states(env, traj)?;
    Ok(states
        .iter()
        .enumerate()
        .skip(start_step as usize)
        .map(|(i, state)| estimate_at(&text_only(traj, i + 1), state, policy, budget))
        .collect())
}
