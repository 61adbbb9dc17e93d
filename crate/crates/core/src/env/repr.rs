//! Synthetic hidden states with a known success direction per layer.
//!
//! For a prefix `τ` and layer `L`:
//!
//! ```text
//! h = A_L · φ(τ) + y · (margin / 2) · g_L + η,   y = ±1
//! ```
//!
//! `φ` is a signed bag-of-token-hashes of the prefix text (unit norm), `A_L` a
//! seed-fixed Gaussian mixing matrix with entries of variance `1/dim`, `g_L` a
//! seed-fixed unit direction, and `η ~ N(0, (κσ)² · I)` with `κ` =
//! [`NOISE_SCALE`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::seed;
use crate::stats;
use crate::trajectory::{ActivationVector, Trajectory};

/// Per-coordinate noise standard deviation in units of `noise_sigma`.
pub const NOISE_SCALE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepresentationConfig {
    pub dim: usize,
    pub layers: Vec<u32>,
    pub margin: f64,
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: vec![8, 16, 24, 32],
            margin: 2.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl RepresentationConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidRepresentation(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if self.layers.is_empty() {
            return bad("layers must be non-empty");
        }
        if self.layers.contains(&0) {
            return bad("layers are numbered from 1");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be finite and >= 0");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerMaps {
    mixing: Vec<f64>,
    direction: Vec<f64>,
}

/// Precomputed per-layer maps for a [`RepresentationConfig`].
#[derive(Debug, Clone)]
pub struct RepresentationProvider {
    config: RepresentationConfig,
    layers: BTreeMap<u32, LayerMaps>,
}

/// Signed bag-of-token-hashes of `text`, L2-normalized (zero for empty text).
pub fn feature_hash(text: &str, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for token in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let h = seed::fnv1a(&token.to_lowercase());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        out[bucket] += sign;
    }
    let n = stats::norm(&out);
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v /= n);
    }
    out
}

impl RepresentationProvider {
    pub fn new(config: &RepresentationConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let dim = config.dim;
        let scale = 1.0 / (dim as f64).sqrt();
        let layers = config
            .layers
            .iter()
            .map(|&layer| {
                let mut rng = seed::stream(config.seed, "mixing", &[u64::from(layer)]);
                let mixing: Vec<f64> = (0..dim * dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                    .collect();
                let mut rng = seed::stream(config.seed, "direction", &[u64::from(layer)]);
                let mut direction: Vec<f64> =
                    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let n = stats::norm(&direction);
                direction.iter_mut().for_each(|v| *v /= n);
                (layer, LayerMaps { mixing, direction })
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &RepresentationConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn layers(&self) -> impl Iterator<Item = u32> + '_ {
        self.layers.keys().copied()
    }

    /// The ground-truth unit success direction `g_L`.
    pub fn direction(&self, layer: u32) -> Result<&[f64], EnvError> {
        self.layers
            .get(&layer)
            .map(|m| m.direction.as_slice())
            .ok_or(EnvError::UnknownLayer(layer))
    }

    /// `A_L · φ(prefix)`, the deterministic context component.
    pub fn context_component(&self, prefix: &Trajectory, layer: u32) -> Result<Vec<f64>, EnvError> {
        let maps = self.layers.get(&layer).ok_or(EnvError::UnknownLayer(layer))?;
        let dim = self.config.dim;
        let phi = feature_hash(&prefix.text(), dim);
        Ok((0..dim)
            .map(|i| stats::dot(&maps.mixing[i * dim..(i + 1) * dim], &phi))
            .collect())
    }

    pub fn hidden_state<R: Rng + ?Sized>(
        &self,
        prefix: &Trajectory,
        layer: u32,
        on_success_path: bool,
        rng: &mut R,
    ) -> Result<ActivationVector, EnvError> {
        let phi = feature_hash(&prefix.text(), self.config.dim);
        self.hidden_state_from_features(&phi, layer, on_success_path, rng)
    }

    /// Same as [`Self::hidden_state`] with `φ(prefix)` already computed, so
    /// several layers can share one hashing pass.
    pub fn hidden_state_from_features<R: Rng + ?Sized>(
        &self,
        phi: &[f64],
        layer: u32,
        on_success_path: bool,
        rng: &mut R,
    ) -> Result<ActivationVector, EnvError> {
        let maps = self.layers.get(&layer).ok_or(EnvError::UnknownLayer(layer))?;
        let dim = self.config.dim;
        let mut h: Vec<f64> = (0..dim)
            .map(|i| stats::dot(&maps.mixing[i * dim..(i + 1) * dim], phi))
            .collect();
        let direction = &maps.direction;
        let y = if on_success_path { 1.0 } else { -1.0 };
        let shift = y * self.config.margin / 2.0;
        let noise_sd = self.config.noise_sigma * NOISE_SCALE;
        for (v, g) in h.iter_mut().zip(direction) {
            let eta: f64 = rng.sample(StandardNormal);
            *v += shift * g + noise_sd * eta;
        }
        Ok(ActivationVector::new(h).expect("finite by construction"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{fixture_task, StepRecord};

    fn prefix(extra: &str) -> Trajectory {
        let mut tr = Trajectory::new(fixture_task("p"));
        tr.push_step(StepRecord::new(0, "", "OK", format!("You are in the kitchen. {extra}")))
            .unwrap();
        tr
    }

    #[test]
    fn unknown_layer() {
        let p = RepresentationProvider::new(&RepresentationConfig::default()).unwrap();
        let mut rng = seed::stream(0, "t", &[]);
        assert_eq!(
            p.hidden_state(&prefix(""), 7, true, &mut rng).unwrap_err(),
            EnvError::UnknownLayer(7)
        );
    }

    #[test]
    fn deterministic_given_stream() {
        let p = RepresentationProvider::new(&RepresentationConfig::default()).unwrap();
        let a = p.hidden_state(&prefix("x"), 8, true, &mut seed::stream(1, "n", &[2])).unwrap();
        let b = p.hidden_state(&prefix("x"), 8, true, &mut seed::stream(1, "n", &[2])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 64);
    }

    #[test]
    fn projection_without_noise_is_plus_minus_half_margin_plus_offset() {
        let cfg = RepresentationConfig { noise_sigma: 1e-12, ..RepresentationConfig::default() };
        let p = RepresentationProvider::new(&cfg).unwrap();
        for layer in [8, 32] {
            let pre = prefix("A mug is on the shelf.");
            let g = p.direction(layer).unwrap().to_vec();
            let offset = stats::dot(&p.context_component(&pre, layer).unwrap(), &g);
            let mut rng = seed::stream(3, "n", &[]);
            let pos = p.hidden_state(&pre, layer, true, &mut rng).unwrap();
            let neg = p.hidden_state(&pre, layer, false, &mut rng).unwrap();
            assert!((stats::dot(pos.values(), &g) - (1.0 + offset)).abs() < 1e-9);
            assert!((stats::dot(neg.values(), &g) - (-1.0 + offset)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_margin_makes_classes_identical() {
        let cfg = RepresentationConfig { margin: 0.0, ..RepresentationConfig::default() };
        let p = RepresentationProvider::new(&cfg).unwrap();
        let pre = prefix("");
        let a = p.hidden_state(&pre, 16, true, &mut seed::stream(5, "n", &[])).unwrap();
        let b = p.hidden_state(&pre, 16, false, &mut seed::stream(5, "n", &[])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn feature_hash_is_prefix_sensitive_and_unit() {
        let a = feature_hash("go to kitchen", 64);
        let b = feature_hash("go to bedroom", 64);
        assert!((stats::norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, b);
        assert_eq!(feature_hash("", 8), vec![0.0; 8]);
        assert_eq!(feature_hash("Go TO kitchen", 64), a);
    }

    #[test]
    fn class_mean_difference_aligns_with_direction() {
        let p = RepresentationProvider::new(&RepresentationConfig::default()).unwrap();
        let prefixes: Vec<Trajectory> = (0..50).map(|i| prefix(&format!("item {i}"))).collect();
        for layer in [8, 16, 24, 32] {
            let dim = p.dim();
            let mut diff = vec![0.0; dim];
            let draws = 10_000;
            for i in 0..draws {
                let pre = &prefixes[i % prefixes.len()];
                let mut rng = seed::stream(9, "draw", &[u64::from(layer), i as u64]);
                let s = p.hidden_state(pre, layer, true, &mut rng).unwrap();
                let f = p.hidden_state(pre, layer, false, &mut rng).unwrap();
                for k in 0..dim {
                    diff[k] += (s.values()[k] - f.values()[k]) / draws as f64;
                }
            }
            let cos = stats::cosine(&diff, p.direction(layer).unwrap());
            assert!(cos >= 0.99, "layer {layer}: cosine {cos}");
            assert!((stats::norm(&diff) - 2.0).abs() < 0.05);
        }
    }
}
