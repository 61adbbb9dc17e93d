use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::conformal::{Thresholds, DEFAULT_MIN_PER_CELL};
use crate::env::{EnvConfig, EnvKind, PolicyProfile, RepresentationConfig, SplitPlan, WeightedProfile};
use crate::probe::TrainConfig;
use crate::reward::RolloutBudget;
use crate::seed;
use crate::steering::CoupledAgent;
use crate::trajectory::Split;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub calibration: f64,
    pub probe_train: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.6, calibration: 0.2, probe_train: 0.2 }
    }
}

impl SplitFractions {
    pub fn plan(&self) -> Result<SplitPlan, PipelineError> {
        let total = self.train + self.calibration + self.probe_train;
        if (total - 1.0).abs() > 1e-9 {
            return Err(PipelineError::Validation(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        SplitPlan::new(vec![
            (Split::Train, self.train),
            (Split::Calibration, self.calibration),
            (Split::ProbeTrain, self.probe_train),
        ])
        .map_err(|e| PipelineError::Validation(e.to_string()))
    }
}

/// Which labels train the probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    #[default]
    Conformal,
    Oracle,
}

/// Which ground truth sorts calibration steps into the two populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationTruth {
    /// Per-step oracle where present, episode outcome otherwise.
    #[default]
    Oracle,
    /// Episode outcome applied to every step.
    FinalOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    /// Steered layer; when absent the layer whose probe validated best at the
    /// first intervention step is used.
    #[serde(default)]
    pub layer: Option<u32>,
    pub timesteps: Vec<u32>,
    pub coefficient: f64,
    pub n_episodes: usize,
    #[serde(default)]
    pub agent: CoupledAgent,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            layer: None,
            timesteps: vec![3],
            coefficient: 0.025,
            n_episodes: 2000,
            agent: CoupledAgent::default(),
        }
    }
}

fn default_profiles() -> Vec<WeightedProfile> {
    vec![
        WeightedProfile { name: "expert".into(), weight: 0.3, profile: PolicyProfile::expert() },
        WeightedProfile { name: "noisy".into(), weight: 0.3, profile: PolicyProfile::noisy(0.15) },
        WeightedProfile { name: "drifting".into(), weight: 0.4, profile: PolicyProfile::drifting(2, 6) },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Episodes split into train / calibration / probe-train.
    pub n_episodes: usize,
    pub n_test_episodes: usize,
    pub n_ood_episodes: usize,
    pub start_timestep: u32,
    pub min_per_cell: usize,
    pub label_source: LabelSource,
    pub calibration_truth: CalibrationTruth,
    /// Also probe the other environment kind with otherwise matched settings.
    pub compare_env: bool,
    /// Ingested record file used in place of generated episodes.
    pub input_corpus: Option<PathBuf>,
    pub env: EnvConfig,
    pub rep: RepresentationConfig,
    pub profiles: Vec<WeightedProfile>,
    pub budget: RolloutBudget,
    pub thresholds: Thresholds,
    pub train: TrainConfig,
    pub splits: SplitFractions,
    pub intervention: InterventionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("steplens-run"),
            n_episodes: 1000,
            n_test_episodes: 200,
            n_ood_episodes: 200,
            start_timestep: 2,
            min_per_cell: DEFAULT_MIN_PER_CELL,
            label_source: LabelSource::Conformal,
            calibration_truth: CalibrationTruth::Oracle,
            compare_env: true,
            input_corpus: None,
            env: EnvConfig::default(),
            rep: RepresentationConfig::default(),
            profiles: default_profiles(),
            budget: RolloutBudget::default(),
            thresholds: Thresholds::default(),
            train: TrainConfig::default(),
            splits: SplitFractions::default(),
            intervention: InterventionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Validation(m));
        self.splits.plan()?;
        let v = |r: Result<(), String>| r.map_err(PipelineError::Validation);
        v(self.env.validate().map_err(|e| e.to_string()))?;
        v(self.rep.validate().map_err(|e| e.to_string()))?;
        v(self.thresholds.validate().map_err(|e| e.to_string()))?;
        v(self.train.validate().map_err(|e| e.to_string()))?;
        if self.profiles.is_empty() {
            return bad("at least one policy profile is required".into());
        }
        for p in &self.profiles {
            v(p.profile.validate(self.env.horizon).map_err(|e| format!("profile {}: {e}", p.name)))?;
            if !(p.weight >= 0.0) {
                return bad(format!("profile {} has a negative weight", p.name));
            }
        }
        if self.budget.n_rollouts == 0 {
            return bad("budget.n_rollouts must be >= 1".into());
        }
        if self.start_timestep < 1 || self.start_timestep > self.env.horizon {
            return bad(format!("start_timestep must be in 1..={}", self.env.horizon));
        }
        if self.n_episodes == 0 && self.input_corpus.is_none() {
            return bad("n_episodes must be >= 1".into());
        }
        let iv = &self.intervention;
        if iv.timesteps.is_empty() {
            return bad("intervention.timesteps must be non-empty".into());
        }
        if let Some(&t) = iv.timesteps.iter().find(|&&t| t < 1 || t > self.env.horizon) {
            return bad(format!("intervention timestep {t} outside 1..={}", self.env.horizon));
        }
        if !iv.coefficient.is_finite() {
            return bad("intervention.coefficient must be finite".into());
        }
        if let Some(l) = iv.layer {
            if !self.rep.layers.contains(&l) {
                return bad(format!("intervention.layer {l} is not a representation layer"));
            }
        }
        Ok(())
    }

    /// Timesteps of the probe grid.
    pub fn timesteps(&self) -> Vec<u32> {
        (self.start_timestep..=self.env.horizon).collect()
    }

    /// Copy with every nested seed derived from `master_seed` by stage name.
    pub fn resolved(&self) -> Self {
        let m = self.master_seed;
        let mut out = self.clone();
        out.env.seed = seed::derive(m, "env", &[]);
        out.rep.seed = seed::derive(m, "rep", &[]);
        for (i, p) in out.profiles.iter_mut().enumerate() {
            p.profile.seed = seed::derive(m, "policy", &[i as u64]);
        }
        out.budget.seed = seed::derive(m, "reward", &[]);
        out.train.seed = seed::derive(m, "probe", &[]);
        out
    }

    pub fn steer_seed(&self) -> u64 {
        seed::derive(self.master_seed, "steer", &[])
    }

    /// The same settings on the other environment kind.
    pub fn counterpart(&self) -> Self {
        let mut out = self.clone();
        out.env.kind = self.env.kind.other();
        out.env.success_threshold = None;
        out.compare_env = false;
        out.input_corpus = None;
        out
    }

    pub fn ood_env(&self) -> EnvConfig {
        let mut env = self.env.clone();
        env.vocabulary = crate::env::Vocabulary::Shifted;
        env
    }

    pub fn env_for(&self, split: Split) -> EnvConfig {
        if split == Split::TestOod {
            self.ood_env()
        } else {
            self.env.clone()
        }
    }

    pub fn kind(&self) -> EnvKind {
        self.env.kind
    }

    pub fn digest(&self) -> String {
        seed::sha256_hex(&serde_json::to_vec(self).expect("serializable"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_document_uses_defaults() {
        let cfg = PipelineConfig::from_toml("master_seed = 9\n[splits]\ntrain = 0.5\ncalibration = 0.25\nprobe_train = 0.25\n").unwrap();
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.thresholds, Thresholds::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn splits_must_sum_to_one() {
        let mut cfg = PipelineConfig::default();
        cfg.splits = SplitFractions { train: 0.5, calibration: 0.2, probe_train: 0.2 };
        assert!(matches!(cfg.validate(), Err(PipelineError::Validation(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn resolved_seeds_depend_on_master_seed_only() {
        let a = PipelineConfig { master_seed: 1, ..PipelineConfig::default() }.resolved();
        let b = PipelineConfig { master_seed: 1, ..PipelineConfig::default() }.resolved();
        let c = PipelineConfig { master_seed: 2, ..PipelineConfig::default() }.resolved();
        assert_eq!(a, b);
        assert_ne!(a.env.seed, c.env.seed);
        assert_ne!(a.env.seed, a.rep.seed);
    }
}
