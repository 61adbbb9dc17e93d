//! Inductive conformal labeling of step rewards.
//!
//! Two calibration populations are kept: nonconformity scores `α_s = 1 − r`
//! of steps known to be on a success path and `α_f = r` of steps known to be
//! on a failure path. A new step gets one p-value against each population and
//! is labeled Success, Failure or Abstain from the pair.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error("reward {0} outside [0, 1]")]
    OutOfRangeReward(f64),
    #[error("calibration scores are empty")]
    EmptyCalibration,
    #[error("score sequence is empty")]
    EmptyInput,
    #[error("need at least {min} success and {min} failure scores, got {n_success} and {n_failure}")]
    InsufficientCalibration {
        n_success: usize,
        n_failure: usize,
        min: usize,
    },
    #[error("calibration store is not frozen")]
    StoreNotFrozen,
    #[error("calibration store is frozen")]
    StoreFrozen,
    #[error("thresholds must lie in (0, 1), got eps_s={eps_s} eps_f={eps_f}")]
    InvalidThresholds { eps_s: f64, eps_f: f64 },
    #[error("store document: {0}")]
    Document(String),
    #[error("store digest mismatch: recorded {recorded}, computed {computed}")]
    DigestMismatch { recorded: String, computed: String },
}

/// Returns `(α_s, α_f) = (1 − r, r)`.
pub fn nonconformity(r_t: f64) -> Result<(f64, f64), ConformalError> {
    if !(0.0..=1.0).contains(&r_t) {
        return Err(ConformalError::OutOfRangeReward(r_t));
    }
    Ok((1.0 - r_t, r_t))
}

/// `(#{j : α_x ≤ α_j} + 1) / (n + 1)` over ascending `cal_scores`.
pub fn p_value(alpha_x: f64, cal_scores: &[f64]) -> Result<f64, ConformalError> {
    if cal_scores.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    let n = cal_scores.len();
    let at_least = n - cal_scores.partition_point(|&a| a < alpha_x);
    Ok((at_least + 1) as f64 / (n + 1) as f64)
}

/// Exhaustive-count p-value over an unsorted score sequence.
pub fn p_value_classical(alpha_x: f64, scores: &[f64]) -> Result<f64, ConformalError> {
    if scores.is_empty() {
        return Err(ConformalError::EmptyInput);
    }
    let at_least = scores.iter().filter(|&&a| alpha_x <= a).count();
    Ok((at_least + 1) as f64 / (scores.len() + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub eps_s: f64,
    pub eps_f: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { eps_s: 0.1, eps_f: 0.1 }
    }
}

impl Thresholds {
    pub fn new(eps_s: f64, eps_f: f64) -> Result<Self, ConformalError> {
        let thr = Self { eps_s, eps_f };
        thr.validate()?;
        Ok(thr)
    }

    pub fn validate(&self) -> Result<(), ConformalError> {
        let open = |e: f64| e > 0.0 && e < 1.0;
        if open(self.eps_s) && open(self.eps_f) {
            Ok(())
        } else {
            Err(ConformalError::InvalidThresholds { eps_s: self.eps_s, eps_f: self.eps_f })
        }
    }
}

/// Sorted success and failure scores of one calibration cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub success_scores: Vec<f64>,
    pub failure_scores: Vec<f64>,
}

impl ScoreCell {
    fn sort(&mut self) {
        self.success_scores.sort_by(f64::total_cmp);
        self.failure_scores.sort_by(f64::total_cmp);
    }

    fn complete(&self, min: usize) -> bool {
        self.success_scores.len() >= min && self.failure_scores.len() >= min
    }
}

/// Calibration example: timestep, step reward and ground-truth outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledStep {
    pub t: u32,
    pub r_t: f64,
    pub outcome: bool,
}

impl From<(u32, f64, bool)> for LabeledStep {
    fn from((t, r_t, outcome): (u32, f64, bool)) -> Self {
        Self { t, r_t, outcome }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStore {
    per_timestep: BTreeMap<u32, ScoreCell>,
    pooled: ScoreCell,
    min_per_cell: usize,
    #[serde(skip)]
    frozen: bool,
}

pub const DEFAULT_MIN_PER_CELL: usize = 20;

impl CalibrationStore {
    /// An empty, writable store.
    pub fn new(min_per_cell: usize) -> Self {
        Self {
            per_timestep: BTreeMap::new(),
            pooled: ScoreCell::default(),
            min_per_cell,
            frozen: false,
        }
    }

    pub fn insert(&mut self, step: LabeledStep) -> Result<(), ConformalError> {
        if self.frozen {
            return Err(ConformalError::StoreFrozen);
        }
        let (alpha_s, alpha_f) = nonconformity(step.r_t)?;
        let cell = self.per_timestep.entry(step.t).or_default();
        if step.outcome {
            cell.success_scores.push(alpha_s);
            self.pooled.success_scores.push(alpha_s);
        } else {
            cell.failure_scores.push(alpha_f);
            self.pooled.failure_scores.push(alpha_f);
        }
        Ok(())
    }

    /// Sorts the populations, drops incomplete timestep cells and freezes.
    pub fn freeze(mut self) -> Result<Self, ConformalError> {
        let (n_success, n_failure) =
            (self.pooled.success_scores.len(), self.pooled.failure_scores.len());
        if n_success < self.min_per_cell.max(1) || n_failure < self.min_per_cell.max(1) {
            return Err(ConformalError::InsufficientCalibration {
                n_success,
                n_failure,
                min: self.min_per_cell.max(1),
            });
        }
        let min = self.min_per_cell;
        self.per_timestep.retain(|_, c| c.complete(min.max(1)));
        self.per_timestep.values_mut().for_each(ScoreCell::sort);
        self.pooled.sort();
        self.frozen = true;
        Ok(self)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn min_per_cell(&self) -> usize {
        self.min_per_cell
    }

    pub fn pooled(&self) -> &ScoreCell {
        &self.pooled
    }

    pub fn per_timestep(&self) -> &BTreeMap<u32, ScoreCell> {
        &self.per_timestep
    }

    /// The cell used at `t`, and whether it is the pooled fallback.
    pub fn cell(&self, t: u32) -> (&ScoreCell, bool) {
        match self.per_timestep.get(&t) {
            Some(c) => (c, false),
            None => (&self.pooled, true),
        }
    }

    /// A frozen copy with only the pooled populations.
    pub fn pooled_only(&self) -> Self {
        Self {
            per_timestep: BTreeMap::new(),
            pooled: self.pooled.clone(),
            min_per_cell: self.min_per_cell,
            frozen: self.frozen,
        }
    }
}

pub fn calibrate<I, S>(labeled_steps: I, min_per_cell: usize) -> Result<CalibrationStore, ConformalError>
where
    I: IntoIterator<Item = S>,
    S: Into<LabeledStep>,
{
    let mut store = CalibrationStore::new(min_per_cell);
    for step in labeled_steps {
        store.insert(step.into())?;
    }
    store.freeze()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalSizes {
    pub n_s: usize,
    pub n_f: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValuePair {
    pub p_s: f64,
    pub p_f: f64,
    pub cal_sizes: CalSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Success,
    Failure,
    Abstain,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Success => "success",
            Label::Failure => "failure",
            Label::Abstain => "abstain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLabel {
    pub value: Label,
    pub pvalues: PValuePair,
}

/// The decision rule on a p-value pair.
pub fn decide(p_s: f64, p_f: f64, thr: &Thresholds) -> Label {
    let success = p_s >= thr.eps_s && p_f < thr.eps_f;
    let failure = p_f >= thr.eps_f && p_s < thr.eps_s;
    match (success, failure) {
        (true, false) => Label::Success,
        (false, true) => Label::Failure,
        _ => Label::Abstain,
    }
}

pub fn p_values(r_t: f64, t: u32, store: &CalibrationStore) -> Result<PValuePair, ConformalError> {
    if !store.frozen {
        return Err(ConformalError::StoreNotFrozen);
    }
    let (alpha_s, alpha_f) = nonconformity(r_t)?;
    let (cell, _) = store.cell(t);
    Ok(PValuePair {
        p_s: p_value(alpha_s, &cell.success_scores)?,
        p_f: p_value(alpha_f, &cell.failure_scores)?,
        cal_sizes: CalSizes { n_s: cell.success_scores.len(), n_f: cell.failure_scores.len() },
    })
}

pub fn label_step(
    r_t: f64,
    t: u32,
    store: &CalibrationStore,
    thr: &Thresholds,
) -> Result<StepLabel, ConformalError> {
    let pvalues = p_values(r_t, t, store)?;
    Ok(StepLabel { value: decide(pvalues.p_s, pvalues.p_f, thr), pvalues })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Outcome-true steps labeled Failure, over outcome-true steps.
    pub fnr: f64,
    /// Outcome-false steps labeled Success, over outcome-false steps.
    pub fpr: f64,
    pub abstain_rate: f64,
    pub n: usize,
    pub n_success: usize,
    pub n_failure: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn audit_error_rates(
    store: &CalibrationStore,
    thr: &Thresholds,
    heldout: &[LabeledStep],
) -> Result<AuditReport, ConformalError> {
    let (mut fn_count, mut fp_count, mut abstain, mut n_success) = (0, 0, 0, 0);
    for step in heldout {
        let label = label_step(step.r_t, step.t, store, thr)?.value;
        if step.outcome {
            n_success += 1;
        }
        match (label, step.outcome) {
            (Label::Failure, true) => fn_count += 1,
            (Label::Success, false) => fp_count += 1,
            (Label::Abstain, _) => abstain += 1,
            _ => {}
        }
    }
    let n = heldout.len();
    Ok(AuditReport {
        fnr: ratio(fn_count, n_success),
        fpr: ratio(fp_count, n - n_success),
        abstain_rate: ratio(abstain, n),
        n,
        n_success,
        n_failure: n - n_success,
    })
}

/// One audit per timestep present in `heldout`.
pub fn audit_by_timestep(
    store: &CalibrationStore,
    thr: &Thresholds,
    heldout: &[LabeledStep],
) -> Result<BTreeMap<u32, AuditReport>, ConformalError> {
    let mut groups: BTreeMap<u32, Vec<LabeledStep>> = BTreeMap::new();
    for step in heldout {
        groups.entry(step.t).or_default().push(*step);
    }
    groups
        .into_iter()
        .map(|(t, steps)| Ok((t, audit_error_rates(store, thr, &steps)?)))
        .collect()
}

#[derive(Serialize)]
struct DocumentBody<'a> {
    thresholds: &'a Thresholds,
    min_per_cell: usize,
    per_timestep: &'a BTreeMap<u32, ScoreCell>,
    pooled: &'a ScoreCell,
}

#[derive(Serialize, Deserialize)]
struct Document {
    thresholds: Thresholds,
    min_per_cell: usize,
    per_timestep: BTreeMap<u32, ScoreCell>,
    pooled: ScoreCell,
    digest: String,
}

fn body_digest(body: &DocumentBody<'_>) -> String {
    seed::sha256_hex(&serde_json::to_vec(body).expect("serializable"))
}

impl CalibrationStore {
    /// Content digest of the store together with `thr`.
    pub fn digest(&self, thr: &Thresholds) -> String {
        body_digest(&DocumentBody {
            thresholds: thr,
            min_per_cell: self.min_per_cell,
            per_timestep: &self.per_timestep,
            pooled: &self.pooled,
        })
    }

    pub fn save<W: Write>(&self, thr: &Thresholds, mut sink: W) -> Result<(), ConformalError> {
        if !self.frozen {
            return Err(ConformalError::StoreNotFrozen);
        }
        let doc = Document {
            thresholds: *thr,
            min_per_cell: self.min_per_cell,
            per_timestep: self.per_timestep.clone(),
            pooled: self.pooled.clone(),
            digest: self.digest(thr),
        };
        serde_json::to_writer_pretty(&mut sink, &doc)
            .map_err(|e| ConformalError::Document(e.to_string()))?;
        sink.write_all(b"\n").map_err(|e| ConformalError::Document(e.to_string()))
    }

    /// Loads a saved store, checking its digest and sort order.
    pub fn load<R: Read>(source: R) -> Result<(Self, Thresholds), ConformalError> {
        let doc: Document =
            serde_json::from_reader(source).map_err(|e| ConformalError::Document(e.to_string()))?;
        doc.thresholds.validate()?;
        let store = Self {
            per_timestep: doc.per_timestep,
            pooled: doc.pooled,
            min_per_cell: doc.min_per_cell,
            frozen: true,
        };
        let computed = store.digest(&doc.thresholds);
        if computed != doc.digest {
            return Err(ConformalError::DigestMismatch { recorded: doc.digest, computed });
        }
        let sorted = |v: &[f64]| {
            v.windows(2).all(|w| w[0] <= w[1]) && v.iter().all(|a| (0.0..=1.0).contains(a))
        };
        let cells = store.per_timestep.values().chain(std::iter::once(&store.pooled));
        for c in cells {
            if !sorted(&c.success_scores) || !sorted(&c.failure_scores) {
                return Err(ConformalError::Document("score arrays must be sorted and in [0, 1]".into()));
            }
        }
        Ok((store, doc.thresholds))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force(alpha_x: f64, cal: &[f64]) -> f64 {
        let mut k = 1;
        for &a in cal {
            if alpha_x <= a {
                k += 1;
            }
        }
        k as f64 / (cal.len() + 1) as f64
    }

    #[test]
    fn nonconformity_examples() {
        assert_eq!(nonconformity(0.3).unwrap(), (0.7, 0.3));
        assert_eq!(nonconformity(1.0).unwrap(), (0.0, 1.0));
        assert_eq!(nonconformity(0.5).unwrap(), (0.5, 0.5));
        assert_eq!(nonconformity(1.5), Err(ConformalError::OutOfRangeReward(1.5)));
        assert!(nonconformity(f64::NAN).is_err());
    }

    #[test]
    fn p_value_examples() {
        let cal = [0.2, 0.4, 0.6, 0.8];
        assert_eq!(p_value(0.5, &cal).unwrap(), brute_force(0.5, &cal));
        assert_eq!(p_value(0.5, &cal).unwrap(), 3.0 / 5.0);
        assert_eq!(p_value(0.9, &cal).unwrap(), 1.0 / 5.0);
        assert_eq!(p_value(0.2, &cal).unwrap(), 1.0);
        assert_eq!(p_value(0.4, &cal).unwrap(), 4.0 / 5.0);
        assert_eq!(p_value(0.1, &[]), Err(ConformalError::EmptyCalibration));
    }

    #[test]
    fn classical_examples() {
        assert_eq!(p_value_classical(0.3, &[0.3]).unwrap(), 1.0);
        let nine: Vec<f64> = (0..9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(p_value_classical(0.95, &nine).unwrap(), 0.1);
        assert_eq!(p_value_classical(0.1, &[]), Err(ConformalError::EmptyInput));
    }

    #[test]
    fn binary_search_matches_exhaustive_count() {
        let mut rng = seed::stream(1, "oracle", &[]);
        for i in 0..1000 {
            let n = rng.random_range(1..200);
            // Coarse grid so ties are frequent.
            let grid = if i % 2 == 0 { 10.0 } else { 1e6 };
            let mut cal: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * grid).floor() / grid).collect();
            let alpha = (rng.random::<f64>() * grid).floor() / grid;
            let classical = p_value_classical(alpha, &cal).unwrap();
            cal.sort_by(f64::total_cmp);
            let fast = p_value(alpha, &cal).unwrap();
            assert_eq!(fast.to_bits(), brute_force(alpha, &cal).to_bits());
            assert_eq!(fast.to_bits(), classical.to_bits());
        }
    }

    proptest! {
        #[test]
        fn p_values_are_discrete(cal in prop::collection::vec(0.0f64..=1.0, 1..100), alpha in 0.0f64..=1.0) {
            let mut cal = cal;
            cal.sort_by(f64::total_cmp);
            let n = cal.len();
            let p = p_value(alpha, &cal).unwrap();
            let k = p * (n + 1) as f64;
            prop_assert!((k - k.round()).abs() < 1e-9);
            prop_assert!(k.round() >= 1.0 && k.round() <= (n + 1) as f64);
        }

        #[test]
        fn p_value_non_increasing(cal in prop::collection::vec(0.0f64..=1.0, 1..100), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let mut cal = cal;
            cal.sort_by(f64::total_cmp);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p_value(lo, &cal).unwrap() >= p_value(hi, &cal).unwrap());
        }

        #[test]
        fn label_follows_rule(p_s in 0.0f64..=1.0, p_f in 0.0f64..=1.0) {
            let thr = Thresholds::default();
            let label = decide(p_s, p_f, &thr);
            let expect = if p_s >= 0.1 && p_f < 0.1 {
                Label::Success
            } else if p_f >= 0.1 && p_s < 0.1 {
                Label::Failure
            } else {
                Label::Abstain
            };
            prop_assert_eq!(label, expect);
        }
    }

    #[test]
    fn decide_examples() {
        let thr = Thresholds::default();
        assert_eq!(decide(0.5, 0.02, &thr), Label::Success);
        assert_eq!(decide(0.04, 0.6, &thr), Label::Failure);
        assert_eq!(decide(0.5, 0.5, &thr), Label::Abstain);
        assert_eq!(decide(0.05, 0.05, &thr), Label::Abstain);
    }

    fn grid_steps(per_class: usize, ts: std::ops::RangeInclusive<u32>) -> Vec<LabeledStep> {
        let mut rng = seed::stream(2, "grid", &[]);
        let mut out = Vec::new();
        for t in ts {
            for _ in 0..per_class {
                out.push(LabeledStep { t, r_t: rng.random_range(0.4..1.0), outcome: true });
                out.push(LabeledStep { t, r_t: rng.random_range(0.0..0.6), outcome: false });
            }
        }
        out
    }

    #[test]
    fn calibrate_counts_cells() {
        let store = calibrate(grid_steps(200, 2..=10), 20).unwrap();
        assert!(store.is_frozen());
        assert_eq!(store.per_timestep().keys().copied().collect::<Vec<_>>(), (2..=10).collect::<Vec<_>>());
        assert_eq!(store.pooled().success_scores.len(), 1800);
        assert!(store.pooled().success_scores.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn sparse_timestep_falls_back_to_pooled() {
        let mut steps = grid_steps(50, 2..=4);
        steps.extend((0..30).map(|_| LabeledStep { t: 5, r_t: 0.9, outcome: true }));
        steps.extend((0..5).map(|_| LabeledStep { t: 5, r_t: 0.1, outcome: false }));
        let store = calibrate(steps, 20).unwrap();
        assert!(!store.per_timestep().contains_key(&5));
        assert!(store.cell(5).1);
        assert!(!store.cell(3).1);
        let pair = p_values(0.5, 5, &store).unwrap();
        assert_eq!(pair.cal_sizes, CalSizes { n_s: 180, n_f: 155 });
    }

    #[test]
    fn empty_calibration_is_insufficient() {
        assert!(matches!(
            calibrate(Vec::<LabeledStep>::new(), 20),
            Err(ConformalError::InsufficientCalibration { .. })
        ));
    }

    #[test]
    fn unfrozen_store_cannot_label() {
        let store = CalibrationStore::new(1);
        assert_eq!(
            label_step(0.5, 2, &store, &Thresholds::default()),
            Err(ConformalError::StoreNotFrozen)
        );
        let mut frozen = calibrate(grid_steps(5, 2..=2), 1).unwrap();
        assert_eq!(
            frozen.insert(LabeledStep { t: 2, r_t: 0.5, outcome: true }),
            Err(ConformalError::StoreFrozen)
        );
    }

    #[test]
    fn threshold_validation() {
        assert!(Thresholds::new(0.0, 0.1).is_err());
        assert!(Thresholds::new(0.1, 1.0).is_err());
        assert!(Thresholds::new(0.05, 0.2).is_ok());
    }

    #[test]
    fn separated_populations_are_error_free() {
        let steps: Vec<LabeledStep> = (0..100)
            .flat_map(|_| [LabeledStep { t: 2, r_t: 1.0, outcome: true }, LabeledStep { t: 2, r_t: 0.0, outcome: false }])
            .collect();
        let store = calibrate(steps.clone(), 20).unwrap();
        let audit = audit_error_rates(&store, &Thresholds::default(), &steps).unwrap();
        assert_eq!((audit.fnr, audit.fpr, audit.abstain_rate), (0.0, 0.0, 0.0));
    }

    #[test]
    fn minimal_epsilon_collapses_to_abstain() {
        let steps = grid_steps(99, 2..=2);
        let store = calibrate(steps.clone(), 20).unwrap();
        let eps = 1.0 / 100.0;
        let thr = Thresholds::new(eps, eps).unwrap();
        let audit = audit_error_rates(&store, &thr, &steps).unwrap();
        assert_eq!(audit.abstain_rate, 1.0);
        let wide = audit_error_rates(&store, &Thresholds::new(0.3, 0.3).unwrap(), &steps).unwrap();
        assert!(wide.abstain_rate < 1.0);
    }

    #[test]
    fn audit_bound_holds_per_cell_and_pooled() {
        let draw = |seed_: u64, n: usize| {
            let mut rng = seed::stream(seed_, "audit", &[]);
            let mut out = Vec::new();
            for t in 2..=4u32 {
                for _ in 0..n {
                    let shift = 0.05 * f64::from(t);
                    out.push(LabeledStep { t, r_t: (rng.random::<f64>() * 0.7 + 0.3 - shift).clamp(0.0, 1.0), outcome: true });
                    out.push(LabeledStep { t, r_t: (rng.random::<f64>() * 0.7 - shift).clamp(0.0, 1.0), outcome: false });
                }
            }
            out
        };
        let store = calibrate(draw(1, 500), 20).unwrap();
        let heldout = draw(2, 2000);
        let thr = Thresholds::default();
        let slack = 0.1 + 3.0 * (0.1f64 * 0.9 / 2000.0).sqrt();
        for (t, a) in audit_by_timestep(&store, &thr, &heldout).unwrap() {
            assert!(a.fnr <= slack && a.fpr <= slack, "t={t} {a:?}");
        }
        let pooled = store.pooled_only();
        let all = audit_error_rates(&pooled, &thr, &heldout).unwrap();
        assert!(all.fnr <= slack && all.fpr <= slack, "{all:?}");
    }

    #[test]
    fn save_load_round_trip_and_tamper_check() {
        let store = calibrate(grid_steps(30, 2..=3), 20).unwrap();
        let thr = Thresholds::new(0.05, 0.2).unwrap();
        let mut buf = Vec::new();
        store.save(&thr, &mut buf).unwrap();
        let (back, thr_back) = CalibrationStore::load(buf.as_slice()).unwrap();
        assert_eq!(back, store);
        assert_eq!(thr_back, thr);
        let text = String::from_utf8(buf).unwrap().replacen("\"min_per_cell\": 20", "\"min_per_cell\": 21", 1);
        assert!(matches!(
            CalibrationStore::load(text.as_bytes()),
            Err(ConformalError::DigestMismatch { .. })
        ));
    }
}
