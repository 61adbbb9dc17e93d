//! Canonical data model for tasks, episodes, steps and activations.
//!
//! A [`Trajectory`] is an append-only sequence of [`StepRecord`]s. Step `t = 0`
//! is the acknowledgement step that carries the initial observation; every
//! later step holds one executed action and the environment's response.
//! Trajectories are plain values: every operation returns a new value and the
//! original is never mutated through a shared reference.

mod record;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use record::{read_records, write_records, RecordError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory is already finalized")]
    AlreadyFinalized,
    #[error("non-monotonic timestep: expected t={expected}, got t={got}")]
    NonMonotonicTimestep { expected: u32, got: u32 },
    #[error("prefix length {t} out of range for trajectory of {len} steps")]
    IndexOutOfRange { t: usize, len: usize },
    #[error("cannot finalize a trajectory with no steps")]
    EmptyTrajectory,
    #[error("final reward {0} outside [0, 1]")]
    RewardOutOfRange(f64),
    #[error("invalid activation vector: {0}")]
    InvalidActivation(String),
}

/// Corpus partition an episode belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Calibration,
    ProbeTrain,
    TestId,
    TestOod,
}

impl Split {
    pub const ALL: [Split; 5] = [
        Split::Train,
        Split::Calibration,
        Split::ProbeTrain,
        Split::TestId,
        Split::TestOod,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calibration => "calibration",
            Split::ProbeTrain => "probe-train",
            Split::TestId => "test-id",
            Split::TestOod => "test-ood",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A natural-language task instruction together with its corpus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstruction {
    pub id: String,
    pub text: String,
    pub domain_tag: String,
    pub split: Split,
    /// Seed that regenerates the task in the synthetic environment; absent for
    /// ingested external traces, which cannot be replayed.
    pub seed: Option<u64>,
}

/// Index of one probe cell: a layer at a timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActivationKey {
    pub layer: u32,
    pub timestep: u32,
}

impl ActivationKey {
    pub fn new(layer: u32, timestep: u32) -> Self {
        Self { layer, timestep }
    }
}

impl fmt::Display for ActivationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}@t{}", self.layer, self.timestep)
    }
}

/// A finite, non-empty activation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVector(Vec<f64>);

impl ActivationVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TrajectoryError> {
        if values.is_empty() {
            return Err(TrajectoryError::InvalidActivation("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TrajectoryError::InvalidActivation(format!(
                "non-finite entry at index {i}"
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

/// One ReAct-style step: thought, action, and the environment's response.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepRecord {
    pub t: u32,
    pub thought: String,
    pub action: String,
    pub observation: String,
    /// Activations at the last position of the prefix ending at this step, keyed by layer.
    pub activations: BTreeMap<u32, ActivationVector>,
    /// Ground truth from the synthetic environment; `None` for external traces.
    pub oracle_success: Option<bool>,
    /// Step-wise reward estimate, when the corpus has been annotated.
    pub reward: Option<f64>,
}

impl StepRecord {
    pub fn new(
        t: u32,
        thought: impl Into<String>,
        action: impl Into<String>,
        observation: impl Into<String>,
    ) -> Self {
        Self {
            t,
            thought: thought.into(),
            action: action.into(),
            observation: observation.into(),
            ..Self::default()
        }
    }

    pub fn activation(&self, layer: u32) -> Option<&ActivationVector> {
        self.activations.get(&layer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: TaskInstruction,
    steps: Vec<StepRecord>,
    final_reward: Option<f64>,
    /// Name of the behavior policy that produced the episode, when known.
    pub policy: Option<String>,
}

impl Trajectory {
    pub fn new(task: TaskInstruction) -> Self {
        Self {
            task,
            steps: Vec::new(),
            final_reward: None,
            policy: None,
        }
    }

    pub fn with_policy(mut self, policy: impl Into<String>) -> Self {
        self.policy = Some(policy.into());
        self
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_step(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn is_finalized(&self) -> bool {
        self.final_reward.is_some()
    }

    pub fn final_reward(&self) -> Option<f64> {
        self.final_reward
    }

    /// Returns a new trajectory with `step` appended.
    pub fn append_step(&self, step: StepRecord) -> Result<Trajectory, TrajectoryError> {
        let mut next = self.clone();
        next.push_step(step)?;
        Ok(next)
    }

    /// In-place form of [`Trajectory::append_step`] for owners building an episode.
    pub fn push_step(&mut self, step: StepRecord) -> Result<(), TrajectoryError> {
        if self.is_finalized() {
            return Err(TrajectoryError::AlreadyFinalized);
        }
        let expected = self.steps.last().map_or(0, |s| s.t + 1);
        if step.t != expected {
            return Err(TrajectoryError::NonMonotonicTimestep {
                expected,
                got: step.t,
            });
        }
        self.steps.push(step);
        Ok(())
    }

    /// The first `t` steps as a non-finalized trajectory over the same task.
    pub fn prefix(&self, t: usize) -> Result<Trajectory, TrajectoryError> {
        if t > self.steps.len() {
            return Err(TrajectoryError::IndexOutOfRange {
                t,
                len: self.steps.len(),
            });
        }
        Ok(Trajectory {
            task: self.task.clone(),
            steps: self.steps[..t].to_vec(),
            final_reward: None,
            policy: self.policy.clone(),
        })
    }

    pub fn finalize(mut self, final_reward: f64) -> Result<Trajectory, TrajectoryError> {
        if self.is_finalized() {
            return Err(TrajectoryError::AlreadyFinalized);
        }
        if self.steps.is_empty() {
            return Err(TrajectoryError::EmptyTrajectory);
        }
        if !(0.0..=1.0).contains(&final_reward) {
            return Err(TrajectoryError::RewardOutOfRange(final_reward));
        }
        self.final_reward = Some(final_reward);
        Ok(self)
    }

    /// Mutable access to step annotations (reward estimates, labels) that do
    /// not change the episode's structure.
    pub fn steps_mut(&mut self) -> impl Iterator<Item = &mut StepRecord> {
        self.steps.iter_mut()
    }

    pub fn outcome(&self, success_threshold: f64) -> Option<EpisodeOutcome> {
        self.final_reward
            .map(|r| EpisodeOutcome::from_reward(r, success_threshold))
    }

    /// Concatenated text of the task and every step, in order.
    pub fn text(&self) -> String {
        let mut out = self.task.text.clone();
        for s in &self.steps {
            out.push('\n');
            out.push_str(&s.thought);
            out.push('\n');
            out.push_str(&s.action);
            out.push('\n');
            out.push_str(&s.observation);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub final_reward: f64,
}

impl EpisodeOutcome {
    pub fn from_reward(final_reward: f64, success_threshold: f64) -> Self {
        Self {
            success: final_reward >= success_threshold,
            final_reward,
        }
    }
}

#[cfg(test)]
pub(crate) fn fixture_task(id: &str) -> TaskInstruction {
    TaskInstruction {
        id: id.to_string(),
        text: "Clean a tomato and put it on the shelf.".to_string(),
        domain_tag: "sparse-world".to_string(),
        split: Split::Calibration,
        seed: Some(11),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj_of_len(n: u32) -> Trajectory {
        let mut tr = Trajectory::new(fixture_task("fixture"));
        for t in 0..n {
            tr.push_step(StepRecord::new(t, format!("th{t}"), format!("a{t}"), format!("o{t}")))
                .unwrap();
        }
        tr
    }

    #[test]
    fn append_to_empty() {
        let tr = Trajectory::new(fixture_task("x"));
        let next = tr.append_step(StepRecord::new(0, "", "OK", "o0")).unwrap();
        assert_eq!(next.len(), 1);
        assert!(tr.is_empty());
    }

    #[test]
    fn append_with_gap_is_rejected() {
        let tr = traj_of_len(2);
        let err = tr.append_step(StepRecord::new(3, "", "a", "o")).unwrap_err();
        assert_eq!(err, TrajectoryError::NonMonotonicTimestep { expected: 2, got: 3 });
    }

    #[test]
    fn append_to_finalized_is_rejected() {
        let tr = traj_of_len(2).finalize(1.0).unwrap();
        let err = tr.append_step(StepRecord::new(2, "", "a", "o")).unwrap_err();
        assert_eq!(err, TrajectoryError::AlreadyFinalized);
    }

    #[test]
    fn prefix_cases() {
        let tr = traj_of_len(5).finalize(0.5).unwrap();
        let full = tr.prefix(5).unwrap();
        assert_eq!(full.steps(), tr.steps());
        assert!(!full.is_finalized());

        let empty = tr.prefix(0).unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.task, tr.task);

        let three = tr.prefix(3).unwrap();
        assert_eq!(three.steps(), &tr.steps()[0..3]);
        assert_eq!(three.steps().last().unwrap().action, "a2");

        assert_eq!(
            tr.prefix(6).unwrap_err(),
            TrajectoryError::IndexOutOfRange { t: 6, len: 5 }
        );
        // original untouched
        assert!(tr.is_finalized());
        assert_eq!(tr.len(), 5);
    }

    #[test]
    fn finalize_contracts() {
        let empty = Trajectory::new(fixture_task("e"));
        assert_eq!(empty.finalize(1.0).unwrap_err(), TrajectoryError::EmptyTrajectory);
        assert_eq!(
            traj_of_len(1).finalize(1.5).unwrap_err(),
            TrajectoryError::RewardOutOfRange(1.5)
        );
    }

    #[test]
    fn outcome_uses_threshold() {
        let tr = traj_of_len(3).finalize(0.99).unwrap();
        assert!(tr.outcome(0.99).unwrap().success);
        assert!(!tr.outcome(1.0).unwrap().success);
    }

    #[test]
    fn activation_vector_validation() {
        assert!(ActivationVector::new(vec![]).is_err());
        assert!(ActivationVector::new(vec![1.0, f64::NAN]).is_err());
        assert_eq!(ActivationVector::new(vec![1.0, 2.0]).unwrap().dim(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn nested_prefix_composes(len in 0u32..12, a in 0usize..12, b in 0usize..12) {
                let tr = traj_of_len(len);
                let a = a.min(len as usize);
                let b = b.min(a);
                let nested = tr.prefix(a).unwrap().prefix(b).unwrap();
                prop_assert_eq!(nested, tr.prefix(b).unwrap());
            }
        }
    }
}
