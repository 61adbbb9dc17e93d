//! Scripted behavior policies in ReAct form (a thought followed by an action).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::{expert_action, EnvState, NOTHING_HAPPENS};
use super::{vocab, EnvError};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyKind {
    /// Always the shortest-plan action.
    Expert,
    /// Expert action with probability `1 - error_rate`, otherwise a uniformly
    /// chosen different well-formed action.
    Noisy { error_rate: f64 },
    /// Expert until drift onset, then a hallucinated action repeated forever.
    /// Onset is uniform on `min_onset..=max_onset` (action index).
    Drifting { min_onset: u32, max_onset: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyProfile {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub seed: u64,
}

impl PolicyProfile {
    pub fn expert() -> Self {
        Self { kind: PolicyKind::Expert, seed: 0 }
    }

    pub fn noisy(error_rate: f64) -> Self {
        Self { kind: PolicyKind::Noisy { error_rate }, seed: 0 }
    }

    pub fn drifting(min_onset: u32, max_onset: u32) -> Self {
        Self { kind: PolicyKind::Drifting { min_onset, max_onset }, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, horizon: u32) -> Result<(), EnvError> {
        match self.kind {
            PolicyKind::Expert => Ok(()),
            PolicyKind::Noisy { error_rate } if (0.0..=1.0).contains(&error_rate) => Ok(()),
            PolicyKind::Noisy { error_rate } => Err(EnvError::InvalidProfile(format!(
                "error_rate {error_rate} outside [0, 1]"
            ))),
            PolicyKind::Drifting { min_onset, max_onset }
                if 1 <= min_onset && min_onset <= max_onset && max_onset <= horizon =>
            {
                Ok(())
            }
            PolicyKind::Drifting { min_onset, max_onset } => Err(EnvError::InvalidProfile(format!(
                "drift onset {min_onset}..={max_onset} not within 1..={horizon}"
            ))),
        }
    }
}

fn expert_thought(action: &str) -> String {
    if let Some(room) = action.strip_prefix("go to ") {
        format!("I need to go to the {room} next.")
    } else if action.starts_with("take ") || action.starts_with("pick up ") {
        "I should pick that up before going further.".to_string()
    } else if action.starts_with("clean ") {
        "It has to be clean first, so I will wash it.".to_string()
    } else if action.starts_with("put ") {
        "Now I can place it where the task asks.".to_string()
    } else {
        format!("The next step of the procedure is to {action}.")
    }
}

fn has_drifted(traj: &Trajectory) -> Option<&str> {
    traj.steps()
        .iter()
        .rev()
        .find(|s| s.t > 0 && s.observation == NOTHING_HAPPENS)
        .map(|s| s.action.as_str())
}

/// Choose the next `(thought, action)` for `profile` given the history so far.
pub fn sample_action<R: Rng + ?Sized>(
    profile: &PolicyProfile,
    traj: &Trajectory,
    state: &EnvState,
    rng: &mut R,
) -> (String, String) {
    let oracle = expert_action(state).unwrap_or_else(|| "look around".to_string());
    match profile.kind {
        PolicyKind::Expert => (expert_thought(&oracle), oracle),
        PolicyKind::Noisy { error_rate } => {
            let u: f64 = rng.random();
            if u < error_rate {
                let alternatives: Vec<String> = state
                    .world()
                    .candidate_actions()
                    .into_iter()
                    .filter(|a| *a != oracle)
                    .collect();
                let action = alternatives[rng.random_range(0..alternatives.len())].clone();
                (expert_thought(&action), action)
            } else {
                (expert_thought(&oracle), oracle)
            }
        }
        PolicyKind::Drifting { min_onset, max_onset } => {
            if let Some(prev) = has_drifted(traj) {
                return (
                    "I already have what I need, so I will try that again.".to_string(),
                    prev.to_string(),
                );
            }
            let t = traj.last_step().map_or(1, |s| s.t + 1);
            let drift_now = if t < min_onset {
                false
            } else if t >= max_onset {
                true
            } else {
                // Hazard 1/(remaining window) keeps the onset uniform on the window.
                let hazard = 1.0 / f64::from(max_onset - t + 1);
                rng.random::<f64>() < hazard
            };
            if drift_now {
                drift_action(state, rng)
            } else {
                (expert_thought(&oracle), oracle)
            }
        }
    }
}

pub(crate) fn drift_action<R: Rng + ?Sized>(state: &EnvState, rng: &mut R) -> (String, String) {
    let ghost = vocab::GHOSTS[rng.random_range(0..vocab::GHOSTS.len())];
    let objects = state.world().objects();
    let target = objects[rng.random_range(0..objects.len())];
    (
        format!("I already have the {ghost}, so I will use it."),
        format!("use {ghost} on {target}"),
    )
}
