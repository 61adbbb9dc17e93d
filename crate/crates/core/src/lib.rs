//! Step-wise conformal labeling, linear probing and activation steering for
//! sequential-task agents, with synthetic worlds that carry ground truth.
//!
//! The pipeline runs in stages:
//!
//! 1. [`env`] generates episodes with per-step activations and oracle labels.
//! 2. [`reward`] estimates a step-wise reward `r_t` by Monte Carlo rollouts.
//! 3. [`conformal`] calibrates success/failure score populations and labels
//!    each step `Success`, `Failure` or `Abstain` with bounded error rates.
//! 4. [`probe`] trains one logistic probe per `(layer, timestep)` cell.
//! 5. [`steering`] extracts a contrastive success direction and measures the
//!    effect of adding it during a closed-loop episode.
//!
//! [`pipeline`] orchestrates all stages from a single config file.

pub mod conformal;
pub mod env;
pub mod pipeline;
pub mod probe;
pub mod reward;
pub mod seed;
pub mod stats;
pub mod steering;
pub mod trajectory;
