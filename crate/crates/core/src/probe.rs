//! Linear probes `ŷ = σ(W·z + b)` on standardized activations `z`, one per
//! (layer, timestep) cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::Label;
use crate::seed;
use crate::stats::{dot, sigmoid};
use crate::trajectory::{ActivationKey, StepRecord, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no labeled test examples in cell")]
    EmptyCell,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("probe document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Per-feature mean and population standard deviation; constant features
    /// get scale 1.
    pub fn fit(xs: &[Vec<f64>]) -> Self {
        let dim = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in xs {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub key: ActivationKey,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub b: f64,
    pub standardization: Standardization,
}

impl ProbeParams {
    pub fn zeros(key: ActivationKey, dim: usize) -> Self {
        Self { key, w: vec![0.0; dim], b: 0.0, standardization: Standardization::identity(dim) }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub l2_lambda: f64,
    pub val_fraction: f64,
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 500,
            l2_lambda: 1e-3,
            val_fraction: 0.2,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be >= 0");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        seed::sha256_hex(&serde_json::to_vec(self).expect("serializable"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub n_test: usize,
    pub positive_class: Label,
}

/// Accuracy and F1 with Success as the positive class.
pub fn metrics(predicted: &[bool], truth: &[bool]) -> Result<ProbeMetrics, ProbeError> {
    if predicted.is_empty() {
        return Err(ProbeError::EmptyCell);
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predicted.iter().zip(truth) {
        correct += usize::from(p == y);
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let f1 = if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(ProbeMetrics {
        accuracy: correct as f64 / predicted.len() as f64,
        f1,
        n_test: predicted.len(),
        positive_class: Label::Success,
    })
}

/// Loss and gradient on features that are already standardized.
fn loss_grad_standardized(
    w: &[f64],
    b: f64,
    zs: &[Vec<f64>],
    ys: &[bool],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = zs.len() as f64;
    let mut grad_w = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    for (z, &y) in zs.iter().zip(ys) {
        let logit = dot(w, z) + b;
        let yv = if y { 1.0 } else { 0.0 };
        // softplus(logit) - y·logit, stable for large |logit|
        loss += logit.max(0.0) + (-logit.abs()).exp().ln_1p() - yv * logit;
        let r = sigmoid(logit) - yv;
        grad_w.iter_mut().zip(z).for_each(|(g, v)| *g += r * v);
        grad_b += r;
    }
    loss /= n;
    grad_w.iter_mut().zip(w).for_each(|(g, wi)| *g = *g / n + l2 * wi);
    loss += l2 * dot(w, w) / 2.0;
    (loss, grad_w, grad_b / n)
}

fn check_dim(expected: usize, found: usize) -> Result<(), ProbeError> {
    if expected == found {
        Ok(())
    } else {
        Err(ProbeError::DimensionMismatch { expected, found })
    }
}

/// Mean binary cross-entropy plus `l2·|W|²/2`, with exact gradients in `W`
/// and `b`. Inputs are standardized with the params' standardization first.
pub fn loss_and_gradient(
    params: &ProbeParams,
    xs: &[Vec<f64>],
    ys: &[bool],
    l2_lambda: f64,
) -> Result<(f64, Vec<f64>, f64), ProbeError> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(ProbeError::EmptyBatch);
    }
    for x in xs {
        check_dim(params.dim(), x.len())?;
    }
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| params.standardization.apply(x)).collect();
    Ok(loss_grad_standardized(&params.w, params.b, &zs, ys, l2_lambda))
}

pub fn score(params: &ProbeParams, h: &[f64]) -> Result<f64, ProbeError> {
    check_dim(params.dim(), h.len())?;
    Ok(sigmoid(dot(&params.w, &params.standardization.apply(h)) + params.b))
}

/// Score and label; a score of exactly 0.5 is Success.
pub fn predict(params: &ProbeParams, h: &[f64]) -> Result<(f64, Label), ProbeError> {
    let s = score(params, h)?;
    Ok((s, if s >= 0.5 { Label::Success } else { Label::Failure }))
}

/// Labeled activations for one cell; `true` is Success.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl ProbeDataset {
    pub fn push(&mut self, h: Vec<f64>, y: bool) {
        self.features.push(h);
        self.labels.push(y);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y).count();
        (pos, self.labels.len() - pos)
    }

    fn subset(&self, idx: &[usize]) -> ProbeDataset {
        ProbeDataset {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Training loss and validation loss at an accepted early-stopping checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedProbe {
    pub params: ProbeParams,
    pub validation: ProbeMetrics,
    pub checkpoints: Vec<Checkpoint>,
    pub epochs_run: usize,
}

/// Stratified split: per class, a `val_fraction` share (at least one, never
/// all) goes to validation.
fn stratified_split(labels: &[bool], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::stream(seed, "probe-split", &[]);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * val_fraction).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Full-batch gradient descent with early stopping on validation loss.
pub fn train_probe(
    key: ActivationKey,
    data: &ProbeDataset,
    cfg: &TrainConfig,
) -> Result<TrainedProbe, ProbeError> {
    cfg.validate()?;
    let (pos, neg) = data.class_counts();
    if pos < 2 || neg < 2 {
        return Err(ProbeError::DegenerateDataset(format!(
            "need >= 2 examples per class, got {pos} success and {neg} failure"
        )));
    }
    let dim = data.features[0].len();
    for x in &data.features {
        check_dim(dim, x.len())?;
    }
    let (train_idx, val_idx) = stratified_split(&data.labels, cfg.val_fraction, cfg.seed);
    let train = data.subset(&train_idx);
    let val = data.subset(&val_idx);
    let standardization = Standardization::fit(&train.features);
    let constant = train
        .features
        .iter()
        .all(|x| x.iter().zip(&standardization.mean).all(|(v, m)| v == m));
    if constant {
        return Err(ProbeError::DegenerateDataset("all features constant".into()));
    }
    let zt: Vec<Vec<f64>> = train.features.iter().map(|x| standardization.apply(x)).collect();
    let zv: Vec<Vec<f64>> = val.features.iter().map(|x| standardization.apply(x)).collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let val_loss = |w: &[f64], b: f64| loss_grad_standardized(w, b, &zv, &val.labels, cfg.l2_lambda).0;
    let (train_loss0, _, _) = loss_grad_standardized(&w, b, &zt, &train.labels, cfg.l2_lambda);
    let mut best = (w.clone(), b);
    let mut checkpoints = vec![Checkpoint { epoch: 0, train_loss: train_loss0, val_loss: val_loss(&w, b) }];
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let (_, gw, gb) = loss_grad_standardized(&w, b, &zt, &train.labels, cfg.l2_lambda);
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= cfg.learning_rate * g);
        b -= cfg.learning_rate * gb;
        epochs_run = epoch;
        let vl = val_loss(&w, b);
        if vl < checkpoints.last().expect("seeded").val_loss {
            let (tl, _, _) = loss_grad_standardized(&w, b, &zt, &train.labels, cfg.l2_lambda);
            checkpoints.push(Checkpoint { epoch, train_loss: tl, val_loss: vl });
            best = (w.clone(), b);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let params = ProbeParams { key, w: best.0, b: best.1, standardization };
    let preds: Vec<bool> = val
        .features
        .iter()
        .map(|x| predict(&params, x).map(|(_, l)| l == Label::Success))
        .collect::<Result<_, _>>()?;
    let validation = metrics(&preds, &val.labels)?;
    Ok(TrainedProbe { params, validation, checkpoints, epochs_run })
}

/// Label source for a step: `Some(true)` Success, `Some(false)` Failure,
/// `None` to exclude (Abstain or unlabeled).
pub trait StepLabeler: Sync {
    fn label(&self, traj: &Trajectory, step: &StepRecord) -> Option<bool>;
}

impl<F> StepLabeler for F
where
    F: Fn(&Trajectory, &StepRecord) -> Option<bool> + Sync,
{
    fn label(&self, traj: &Trajectory, step: &StepRecord) -> Option<bool> {
        self(traj, step)
    }
}

/// Ground-truth labels carried by synthetic corpora.
pub fn oracle_labels(_: &Trajectory, step: &StepRecord) -> Option<bool> {
    step.oracle_success
}

/// Collects the labeled activations of one cell across a corpus.
pub fn cell_dataset(corpus: &[Trajectory], key: ActivationKey, labeler: &dyn StepLabeler) -> ProbeDataset {
    let mut data = ProbeDataset::default();
    for traj in corpus {
        let Some(step) = traj.steps().iter().find(|s| s.t == key.timestep) else {
            continue;
        };
        let (Some(h), Some(y)) = (step.activation(key.layer), labeler.label(traj, step)) else {
            continue;
        };
        data.push(h.values().to_vec(), y);
    }
    data
}

/// Serializes a cell map as a list of `{key, value}` entries, since JSON
/// object keys must be strings.
mod cell_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::trajectory::ActivationKey;

    #[derive(Serialize, Deserialize)]
    struct Entry<V> {
        key: ActivationKey,
        value: V,
    }

    pub fn serialize<S: Serializer, V: Serialize>(
        map: &BTreeMap<ActivationKey, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter().map(|(k, v)| Entry { key: *k, value: v }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, V: Deserialize<'de>>(
        d: D,
    ) -> Result<BTreeMap<ActivationKey, V>, D::Error> {
        let entries: Vec<Entry<V>> = Vec::deserialize(d)?;
        Ok(entries.into_iter().map(|e| (e.key, e.value)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum GridCell {
    Trained(TrainedProbe),
    Absent { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub layers: Vec<u32>,
    pub timesteps: Vec<u32>,
    pub config_digest: String,
    #[serde(with = "cell_map")]
    pub cells: BTreeMap<ActivationKey, GridCell>,
}

impl ProbeGrid {
    pub fn trained(&self, key: ActivationKey) -> Option<&TrainedProbe> {
        match self.cells.get(&key) {
            Some(GridCell::Trained(p)) => Some(p),
            _ => None,
        }
    }

    pub fn n_trained(&self) -> usize {
        self.cells.values().filter(|c| matches!(c, GridCell::Trained(_))).count()
    }

    pub fn save<W: std::io::Write>(&self, sink: W) -> Result<(), ProbeError> {
        serde_json::to_writer_pretty(sink, self).map_err(|e| ProbeError::Document(e.to_string()))
    }

    pub fn load<R: std::io::Read>(source: R) -> Result<Self, ProbeError> {
        serde_json::from_reader(source).map_err(|e| ProbeError::Document(e.to_string()))
    }
}

/// Seed used for one cell's validation split.
pub fn cell_seed(base: u64, key: ActivationKey) -> u64 {
    seed::derive(base, "probe-cell", &[u64::from(key.layer), u64::from(key.timestep)])
}

/// Trains one probe per (layer, timestep); cells without usable data are
/// recorded as absent.
pub fn train_grid(
    corpus: &[Trajectory],
    labeler: &dyn StepLabeler,
    layers: &[u32],
    timesteps: &[u32],
    cfg: &TrainConfig,
) -> Result<ProbeGrid, ProbeError> {
    cfg.validate()?;
    let keys: Vec<ActivationKey> = layers
        .iter()
        .flat_map(|&l| timesteps.iter().map(move |&t| ActivationKey::new(l, t)))
        .collect();
    let cells: Vec<(ActivationKey, GridCell)> = keys
        .par_iter()
        .map(|&key| {
            let data = cell_dataset(corpus, key, labeler);
            let cell_cfg = TrainConfig { seed: cell_seed(cfg.seed, key), ..cfg.clone() };
            let cell = match train_probe(key, &data, &cell_cfg) {
                Ok(p) => GridCell::Trained(p),
                Err(e) => GridCell::Absent { reason: e.to_string() },
            };
            (key, cell)
        })
        .collect();
    Ok(ProbeGrid {
        layers: layers.to_vec(),
        timesteps: timesteps.to_vec(),
        config_digest: cfg.digest(),
        cells: cells.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellMetrics {
    Measured(ProbeMetrics),
    Absent { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroSummary {
    /// `None` when no cell was measured.
    pub mean_accuracy: Option<f64>,
    pub mean_f1: Option<f64>,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsGrid {
    pub layers: Vec<u32>,
    pub timesteps: Vec<u32>,
    #[serde(with = "cell_map")]
    pub cells: BTreeMap<ActivationKey, CellMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    F1,
}

impl MetricsGrid {
    pub fn measured(&self, key: ActivationKey) -> Option<&ProbeMetrics> {
        match self.cells.get(&key) {
            Some(CellMetrics::Measured(m)) => Some(m),
            _ => None,
        }
    }

    pub fn summary(&self) -> MacroSummary {
        let ms: Vec<&ProbeMetrics> = self
            .cells
            .values()
            .filter_map(|c| match c {
                CellMetrics::Measured(m) => Some(m),
                CellMetrics::Absent { .. } => None,
            })
            .collect();
        let n = ms.len();
        let avg = |f: fn(&ProbeMetrics) -> f64| {
            (n > 0).then(|| ms.iter().map(|m| f(m)).sum::<f64>() / n as f64)
        };
        MacroSummary { mean_accuracy: avg(|m| m.accuracy), mean_f1: avg(|m| m.f1), n_cells: n }
    }

    fn value(&self, layer: u32, t: u32, metric: Metric) -> Option<f64> {
        self.measured(ActivationKey::new(layer, t)).map(|m| match metric {
            Metric::Accuracy => m.accuracy,
            Metric::F1 => m.f1,
        })
    }

    /// Layers as rows, timesteps as columns; `NA` for absent cells.
    pub fn to_csv(&self, metric: Metric) -> String {
        let mut out = String::from("layer");
        for t in &self.timesteps {
            let _ = write!(out, ",t={t}");
        }
        out.push('\n');
        for &l in &self.layers {
            let _ = write!(out, "{l}");
            for &t in &self.timesteps {
                match self.value(l, t, metric) {
                    Some(v) => {
                        let _ = write!(out, ",{v:.4}");
                    }
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text table; accuracy in percent, F1 as a fraction.
    pub fn to_table(&self, metric: Metric) -> String {
        let mut out = format!("{:>6}", "Layer");
        for t in &self.timesteps {
            let _ = write!(out, " {:>7}", format!("t={t}"));
        }
        out.push('\n');
        for &l in &self.layers {
            let _ = write!(out, "{l:>6}");
            for &t in &self.timesteps {
                let cell = match (self.value(l, t, metric), metric) {
                    (Some(v), Metric::Accuracy) => format!("{:.1}", v * 100.0),
                    (Some(v), Metric::F1) => format!("{v:.3}"),
                    (None, _) => "NA".to_string(),
                };
                let _ = write!(out, " {cell:>7}");
            }
            out.push('\n');
        }
        out
    }
}

/// Scores every trained cell on a labeled test corpus.
pub fn evaluate(grid: &ProbeGrid, corpus: &[Trajectory], labeler: &dyn StepLabeler) -> MetricsGrid {
    let cells = grid
        .cells
        .par_iter()
        .map(|(&key, cell)| {
            let m = match cell {
                GridCell::Absent { reason } => CellMetrics::Absent { reason: reason.clone() },
                GridCell::Trained(p) => {
                    let data = cell_dataset(corpus, key, labeler);
                    let preds: Result<Vec<bool>, ProbeError> = data
                        .features
                        .iter()
                        .map(|x| predict(&p.params, x).map(|(_, l)| l == Label::Success))
                        .collect();
                    match preds.and_then(|p| metrics(&p, &data.labels)) {
                        Ok(m) => CellMetrics::Measured(m),
                        Err(e) => CellMetrics::Absent { reason: e.to_string() },
                    }
                }
            };
            (key, m)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    MetricsGrid { layers: grid.layers.clone(), timesteps: grid.timesteps.clone(), cells }
}

/// Distinct layers present in a corpus's activations.
pub fn corpus_layers(corpus: &[Trajectory]) -> Vec<u32> {
    let set: BTreeSet<u32> = corpus
        .iter()
        .flat_map(|tr| tr.steps().iter().flat_map(|s| s.activations.keys().copied()))
        .collect();
    set.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_data(n_per: usize, dim: usize, margin: f64, seed_: u64) -> ProbeDataset {
        let mut rng = seed::stream(seed_, "probe-test", &[]);
        let mut g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::stats::norm(&g);
        g.iter_mut().for_each(|v| *v /= n);
        let mut data = ProbeDataset::default();
        for i in 0..2 * n_per {
            let y = i % 2 == 0;
            let shift = if y { margin / 2.0 } else { -margin / 2.0 };
            let h = (0..dim).map(|k| shift * g[k] + rng.sample::<f64, _>(StandardNormal)).collect();
            data.push(h, y);
        }
        data
    }

    fn key() -> ActivationKey {
        ActivationKey::new(8, 3)
    }

    #[test]
    fn zero_params_loss_is_ln2() {
        let data = gaussian_data(10, 4, 1.0, 1);
        let p = ProbeParams::zeros(key(), 4);
        let (loss, gw, gb) = loss_and_gradient(&p, &data.features, &data.labels, 1e-3).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(gb, 0.0);
        assert_eq!(gw.len(), 4);
    }

    #[test]
    fn saturated_example_leaves_l2_term() {
        let mut p = ProbeParams::zeros(key(), 2);
        p.w = vec![100.0, 0.0];
        let (loss, _, _) = loss_and_gradient(&p, &[vec![10.0, 0.0]], &[true], 0.5).unwrap();
        assert!((loss - 0.5 * 10_000.0 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed::stream(3, "fd", &[]);
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let dim = rng.random_range(1..8);
            let n = rng.random_range(1..20);
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let ys: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let mut p = ProbeParams::zeros(key(), dim);
            p.w = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            p.b = rng.sample(StandardNormal);
            let l2 = rng.random_range(0.0..0.1);
            let (_, gw, gb) = loss_and_gradient(&p, &xs, &ys, l2).unwrap();
            let h = 1e-5;
            for k in 0..dim {
                let (mut up, mut dn) = (p.clone(), p.clone());
                up.w[k] += h;
                dn.w[k] -= h;
                let num = (loss_and_gradient(&up, &xs, &ys, l2).unwrap().0
                    - loss_and_gradient(&dn, &xs, &ys, l2).unwrap().0)
                    / (2.0 * h);
                worst = worst.max(rel(gw[k], num));
            }
            let (mut up, mut dn) = (p.clone(), p.clone());
            up.b += h;
            dn.b -= h;
            let num = (loss_and_gradient(&up, &xs, &ys, l2).unwrap().0
                - loss_and_gradient(&dn, &xs, &ys, l2).unwrap().0)
                / (2.0 * h);
            worst = worst.max(rel(gb, num));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn dimension_mismatch() {
        let p = ProbeParams::zeros(key(), 3);
        assert_eq!(
            predict(&p, &[1.0, 2.0]),
            Err(ProbeError::DimensionMismatch { expected: 3, found: 2 })
        );
        assert!(matches!(
            loss_and_gradient(&p, &[vec![1.0]], &[true], 0.0),
            Err(ProbeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_params_tie_is_success() {
        let p = ProbeParams::zeros(key(), 3);
        assert_eq!(predict(&p, &[1.0, -2.0, 3.0]).unwrap(), (0.5, Label::Success));
    }

    proptest! {
        #[test]
        fn reflection_through_boundary_sums_to_one(
            w in prop::collection::vec(-3.0f64..3.0, 3),
            b in -2.0f64..2.0,
            h in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            prop_assume!(dot(&w, &w) > 1e-3);
            let mut p = ProbeParams::zeros(key(), 3);
            p.w = w.clone();
            p.b = b;
            let m = (dot(&w, &h) + b) / dot(&w, &w);
            let reflected: Vec<f64> = h.iter().zip(&w).map(|(x, wi)| x - 2.0 * m * wi).collect();
            let s = score(&p, &h).unwrap() + score(&p, &reflected).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn separable_data_trains_well_and_scores_confidently() {
        let data = gaussian_data(500, 16, 6.0, 4);
        let probe = train_probe(key(), &data, &TrainConfig::default()).unwrap();
        assert!(probe.validation.accuracy >= 0.95, "{:?}", probe.validation);
        assert_eq!(probe.validation.n_test, 200);
        let far: Vec<f64> = {
            let mut rng = seed::stream(4, "probe-test", &[]);
            let mut g: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
            let n = crate::stats::norm(&g);
            g.iter_mut().for_each(|v| *v /= n);
            g.iter().map(|v| v * 5.0).collect()
        };
        assert!(predict(&probe.params, &far).unwrap().0 > 0.9);
    }

    #[test]
    fn zero_margin_is_chance() {
        let data = gaussian_data(500, 16, 0.0, 5);
        let probe = train_probe(key(), &data, &TrainConfig::default()).unwrap();
        assert!((probe.validation.accuracy - 0.5).abs() <= 0.1, "{:?}", probe.validation);
    }

    #[test]
    fn training_is_deterministic() {
        let data = gaussian_data(100, 8, 2.0, 6);
        let a = train_probe(key(), &data, &TrainConfig::default()).unwrap();
        let b = train_probe(key(), &data.clone(), &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_training_loss_is_non_increasing() {
        for s in 0..5 {
            let data = gaussian_data(200, 16, 1.0, 10 + s);
            let probe = train_probe(key(), &data, &TrainConfig { seed: s, ..TrainConfig::default() }).unwrap();
            for w in probe.checkpoints.windows(2) {
                assert!(w[1].train_loss <= w[0].train_loss, "{:?}", probe.checkpoints);
            }
        }
    }

    #[test]
    fn scaling_inputs_keeps_validation_predictions() {
        let data = gaussian_data(150, 8, 1.5, 7);
        let scaled = ProbeDataset {
            features: data.features.iter().map(|x| x.iter().map(|v| v * 4.0).collect()).collect(),
            labels: data.labels.clone(),
        };
        let cfg = TrainConfig::default();
        let a = train_probe(key(), &data, &cfg).unwrap();
        let b = train_probe(key(), &scaled, &cfg).unwrap();
        let (_, val) = stratified_split(&data.labels, cfg.val_fraction, cfg.seed);
        for i in val {
            assert_eq!(
                predict(&a.params, &data.features[i]).unwrap().1,
                predict(&b.params, &scaled.features[i]).unwrap().1
            );
        }
    }

    #[test]
    fn degenerate_datasets() {
        let mut one_class = ProbeDataset::default();
        for i in 0..10 {
            one_class.push(vec![i as f64], true);
        }
        assert!(matches!(
            train_probe(key(), &one_class, &TrainConfig::default()),
            Err(ProbeError::DegenerateDataset(_))
        ));
        let mut constant = ProbeDataset::default();
        for i in 0..10 {
            constant.push(vec![1.0, 2.0], i % 2 == 0);
        }
        assert!(matches!(
            train_probe(key(), &constant, &TrainConfig::default()),
            Err(ProbeError::DegenerateDataset(_))
        ));
    }

    #[test]
    fn f1_definitions() {
        let m = metrics(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
        let m = metrics(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.f1, 0.5);
        assert_eq!(metrics(&[], &[]), Err(ProbeError::EmptyCell));
    }

    #[test]
    fn csv_and_table_layout() {
        let mut cells = BTreeMap::new();
        let m = ProbeMetrics { accuracy: 0.9375, f1: 0.5, n_test: 16, positive_class: Label::Success };
        cells.insert(ActivationKey::new(8, 2), CellMetrics::Measured(m));
        cells.insert(ActivationKey::new(8, 3), CellMetrics::Absent { reason: "x".into() });
        let grid = MetricsGrid { layers: vec![8], timesteps: vec![2, 3], cells };
        assert_eq!(grid.to_csv(Metric::Accuracy), "layer,t=2,t=3\n8,0.9375,NA\n");
        assert_eq!(grid.to_table(Metric::F1), " Layer     t=2     t=3\n     8   0.500      NA\n");
        assert_eq!(grid.summary().n_cells, 1);
    }
}
