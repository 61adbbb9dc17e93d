//! Synthetic text worlds, scripted policies and a ground-truth-bearing
//! representation provider.
//!
//! Two world kinds are provided:
//!
//! - **dense**: an ordered list of sub-goals; the final reward is the fraction
//!   completed in order.
//! - **sparse**: fetch (and optionally clean) one object and place it on a
//!   target receptacle; the final reward is 1 when the goal predicate holds and
//!   0 otherwise.
//!
//! Both worlds answer any action they cannot interpret with
//! [`NOTHING_HAPPENS`] and leave task progress untouched.

mod corpus;
mod policy;
mod repr;
mod vocab;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{generate_corpus, CorpusRequest, SplitPlan, WeightedProfile};
pub(crate) use policy::drift_action;
pub use policy::{sample_action, PolicyKind, PolicyProfile};
pub use repr::{feature_hash, RepresentationConfig, RepresentationProvider, NOISE_SCALE};
pub use world::{
    env_step, expert_action, final_reward, oracle_step_success, replay, reset, EnvState,
    StepOutcome, World, NOTHING_HAPPENS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("invalid policy profile: {0}")]
    InvalidProfile(String),
    #[error("invalid representation config: {0}")]
    InvalidRepresentation(String),
    #[error("episode already terminated")]
    TerminatedEpisode,
    #[error("episode has not terminated")]
    EpisodeNotTerminated,
    #[error("layer {0} is not provided by the representation config")]
    UnknownLayer(u32),
    #[error("replay diverged at t={t}: {reason}")]
    ReplayMismatch { t: u32, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Dense,
    Sparse,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Dense => "dense",
            EnvKind::Sparse => "sparse",
        }
    }

    pub fn domain_tag(self) -> &'static str {
        match self {
            EnvKind::Dense => "dense-world",
            EnvKind::Sparse => "sparse-world",
        }
    }

    pub fn other(self) -> EnvKind {
        match self {
            EnvKind::Dense => EnvKind::Sparse,
            EnvKind::Sparse => EnvKind::Dense,
        }
    }
}

/// Which object/room vocabulary a world draws from. `Shifted` is the
/// out-of-distribution stand-in: unseen names on top of unseen task seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vocabulary {
    #[default]
    Standard,
    Shifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Number of ordered sub-goals (dense worlds only).
    pub n_subgoals: u32,
    pub horizon: u32,
    pub n_rooms: usize,
    pub n_objects: usize,
    #[serde(default)]
    pub vocabulary: Vocabulary,
    /// Final reward at or above which an episode counts as a success.
    /// Defaults to 0.99 for dense worlds and 1.0 for sparse worlds.
    #[serde(default)]
    pub success_threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl EnvConfig {
    pub fn dense(n_subgoals: u32) -> Self {
        Self {
            kind: EnvKind::Dense,
            n_subgoals,
            ..Self::default()
        }
    }

    pub fn sparse() -> Self {
        Self {
            kind: EnvKind::Sparse,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_horizon(mut self, horizon: u32) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn success_threshold(&self) -> f64 {
        self.success_threshold.unwrap_or(match self.kind {
            EnvKind::Dense => 0.99,
            EnvKind::Sparse => 1.0,
        })
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if self.horizon < 1 {
            return bad("horizon must be >= 1".into());
        }
        if self.n_rooms < 1 || self.n_rooms > vocab::MAX_ROOMS {
            return bad(format!("n_rooms must be in 1..={}", vocab::MAX_ROOMS));
        }
        if self.n_objects < 1 || self.n_objects > vocab::MAX_OBJECTS {
            return bad(format!("n_objects must be in 1..={}", vocab::MAX_OBJECTS));
        }
        if let Some(thr) = self.success_threshold {
            if !(thr > 0.0 && thr <= 1.0) {
                return bad(format!("success_threshold {thr} outside (0, 1]"));
            }
        }
        if self.kind == EnvKind::Dense {
            if self.n_subgoals < 1 {
                return bad("n_subgoals must be >= 1".into());
            }
            if self.horizon < self.n_subgoals {
                return bad(format!(
                    "horizon {} shorter than n_subgoals {}",
                    self.horizon, self.n_subgoals
                ));
            }
            let distinct = self.n_objects * vocab::DENSE_VERBS.len();
            if self.n_subgoals as usize > distinct {
                return bad(format!("n_subgoals exceeds the {distinct} distinct sub-goals available"));
            }
        }
        Ok(())
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::Dense,
            n_subgoals: 10,
            horizon: 10,
            n_rooms: 4,
            n_objects: 6,
            vocabulary: Vocabulary::Standard,
            success_threshold: None,
            seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(EnvConfig::default().validate().is_ok());
        assert!(EnvConfig::sparse().validate().is_ok());
        assert!(EnvConfig::dense(11).validate().is_err());
        assert!(EnvConfig { n_rooms: 0, ..EnvConfig::default() }.validate().is_err());
        assert!(EnvConfig { horizon: 0, ..EnvConfig::sparse() }.validate().is_err());
    }

    #[test]
    fn thresholds_default_per_kind() {
        assert_eq!(EnvConfig::dense(3).success_threshold(), 0.99);
        assert_eq!(EnvConfig::sparse().success_threshold(), 1.0);
    }
}
