//! Line-delimited JSON record format: one object per step.
//!
//! ```text
//! {"task_id":"dense-00003","split":"calibration","domain_tag":"dense-world",
//!  "instruction":"...","task_seed":42,"policy":"expert","t":2,"thought":"...",
//!  "action":"focus on thermometer","observation":"...","oracle_success":true,
//!  "activations":{"L8":[...],"L16":[...]}}
//! ```
//!
//! `final_reward` appears on the last step of a finalized episode only.
//! `task_seed`, `policy`, `oracle_success` and `r_t` are optional.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use super::{ActivationVector, Split, StepRecord, TaskInstruction, Trajectory};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("write failed: {0}")]
    Sink(#[from] std::io::Error),
    #[error("trajectory {task_id} is not finalized")]
    UnfinalizedTrajectory { task_id: String },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("activation dimension mismatch at line {line} for layer {layer}: expected {expected}, found {found}")]
    DimensionMismatch {
        line: usize,
        layer: u32,
        expected: usize,
        found: usize,
    },
}

struct LayerMap<'a>(&'a BTreeMap<u32, ActivationVector>);

impl Serialize for LayerMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (layer, v) in self.0 {
            map.serialize_entry(&format!("L{layer}"), v.values())?;
        }
        map.end()
    }
}

#[derive(Serialize)]
struct LineOut<'a> {
    task_id: &'a str,
    split: Split,
    domain_tag: &'a str,
    instruction: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    task_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<&'a str>,
    t: u32,
    thought: &'a str,
    action: &'a str,
    observation: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_success: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_t: Option<f64>,
    activations: LayerMap<'a>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineIn {
    task_id: String,
    split: Split,
    domain_tag: String,
    instruction: String,
    #[serde(default)]
    task_seed: Option<u64>,
    #[serde(default)]
    policy: Option<String>,
    t: u32,
    thought: String,
    action: String,
    observation: String,
    #[serde(default)]
    final_reward: Option<f64>,
    #[serde(default)]
    oracle_success: Option<bool>,
    #[serde(default)]
    r_t: Option<f64>,
    activations: BTreeMap<String, Vec<f64>>,
}

/// Write every step of every trajectory as one line. Returns the line count.
pub fn write_records<W: Write>(corpus: &[Trajectory], mut sink: W) -> Result<usize, RecordError> {
    if let Some(tr) = corpus.iter().find(|tr| !tr.is_finalized()) {
        return Err(RecordError::UnfinalizedTrajectory {
            task_id: tr.task.id.clone(),
        });
    }
    let mut lines = 0;
    for tr in corpus {
        let last = tr.len() - 1;
        for (i, step) in tr.steps().iter().enumerate() {
            let line = LineOut {
                task_id: &tr.task.id,
                split: tr.task.split,
                domain_tag: &tr.task.domain_tag,
                instruction: &tr.task.text,
                task_seed: tr.task.seed,
                policy: tr.policy.as_deref(),
                t: step.t,
                thought: &step.thought,
                action: &step.action,
                observation: &step.observation,
                final_reward: if i == last { tr.final_reward() } else { None },
                oracle_success: step.oracle_success,
                r_t: step.reward,
                activations: LayerMap(&step.activations),
            };
            serde_json::to_writer(&mut sink, &line)
                .map_err(|e| RecordError::Sink(std::io::Error::other(e)))?;
            sink.write_all(b"\n")?;
            lines += 1;
        }
    }
    sink.flush()?;
    Ok(lines)
}

fn parse_layer(key: &str) -> Option<u32> {
    let layer: u32 = key.strip_prefix('L')?.parse().ok()?;
    (layer >= 1).then_some(layer)
}

struct Pending {
    task: TaskInstruction,
    policy: Option<String>,
    steps: Vec<(usize, StepRecord, Option<f64>)>,
}

/// Read a record stream back into trajectories, grouped by task id in order of
/// first appearance with steps ordered by `t`.
pub fn read_records<R: BufRead>(source: R) -> Result<Vec<Trajectory>, RecordError> {
    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    let mut dims: BTreeMap<u32, (usize, usize)> = BTreeMap::new();

    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| RecordError::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| RecordError::MalformedRecord {
            line: line_no,
            message,
        };
        let rec: LineIn = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;

        let mut activations = BTreeMap::new();
        for (key, values) in rec.activations {
            let layer = parse_layer(&key)
                .ok_or_else(|| malformed(format!("bad activation key {key:?}")))?;
            let found = values.len();
            match dims.get(&layer) {
                Some(&(expected, _)) if expected != found => {
                    return Err(RecordError::DimensionMismatch {
                        line: line_no,
                        layer,
                        expected,
                        found,
                    });
                }
                Some(_) => {}
                None => {
                    dims.insert(layer, (found, line_no));
                }
            }
            let v = ActivationVector::new(values).map_err(|e| malformed(e.to_string()))?;
            activations.insert(layer, v);
        }
        if let Some(r) = rec.final_reward {
            if !(0.0..=1.0).contains(&r) {
                return Err(malformed(format!("final_reward {r} outside [0, 1]")));
            }
        }
        if let Some(r) = rec.r_t {
            if !(0.0..=1.0).contains(&r) {
                return Err(malformed(format!("r_t {r} outside [0, 1]")));
            }
        }

        let task = TaskInstruction {
            id: rec.task_id.clone(),
            text: rec.instruction,
            domain_tag: rec.domain_tag,
            split: rec.split,
            seed: rec.task_seed,
        };
        let step = StepRecord {
            t: rec.t,
            thought: rec.thought,
            action: rec.action,
            observation: rec.observation,
            activations,
            oracle_success: rec.oracle_success,
            reward: rec.r_t,
        };

        let entry = pending.entry(rec.task_id.clone()).or_insert_with(|| {
            order.push(rec.task_id.clone());
            Pending {
                task: task.clone(),
                policy: rec.policy.clone(),
                steps: Vec::new(),
            }
        });
        if entry.task != task || entry.policy != rec.policy {
            return Err(malformed(format!(
                "task metadata for {} differs from its earlier records",
                rec.task_id
            )));
        }
        if entry.steps.iter().any(|(_, s, _)| s.t == step.t) {
            return Err(malformed(format!(
                "duplicate record for task {} at t={}",
                rec.task_id, step.t
            )));
        }
        entry.steps.push((line_no, step, rec.final_reward));
    }

    let mut corpus = Vec::with_capacity(order.len());
    for id in order {
        let p = pending.remove(&id).expect("registered task");
        let mut steps = p.steps;
        steps.sort_by_key(|(_, s, _)| s.t);
        let last_t = steps.last().map(|(_, s, _)| s.t);
        let mut tr = Trajectory::new(p.task);
        tr.policy = p.policy;
        let mut final_reward = None;
        for (line, step, fr) in steps {
            if fr.is_some() {
                if Some(step.t) != last_t {
                    return Err(RecordError::MalformedRecord {
                        line,
                        message: format!("final_reward on non-final step t={}", step.t),
                    });
                }
                final_reward = fr;
            }
            tr.push_step(step).map_err(|e| RecordError::MalformedRecord {
                line,
                message: e.to_string(),
            })?;
        }
        if let Some(r) = final_reward {
            tr = tr.finalize(r).expect("validated final reward");
        }
        corpus.push(tr);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::fixture_task;
    use proptest::prelude::*;

    fn fixture(id: &str, n: u32, dim: usize) -> Trajectory {
        let mut tr = Trajectory::new(fixture_task(id)).with_policy("expert");
        for t in 0..n {
            let mut s = StepRecord::new(t, format!("think {t}"), format!("act {t}"), "obs");
            if t > 0 {
                for layer in [8, 16] {
                    let v: Vec<f64> = (0..dim).map(|i| (i as f64 + 0.1) / (t as f64 + 3.0)).collect();
                    s.activations.insert(layer, ActivationVector::new(v).unwrap());
                }
                s.oracle_success = Some(t % 2 == 0);
            }
            tr.push_step(s).unwrap();
        }
        tr.finalize(0.75).unwrap()
    }

    #[test]
    fn counts_lines() {
        let corpus = vec![fixture("a", 3, 4), fixture("b", 3, 4)];
        let mut buf = Vec::new();
        assert_eq!(write_records(&corpus, &mut buf).unwrap(), 6);
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 6);
    }

    #[test]
    fn rejects_unfinalized() {
        let open = fixture("a", 3, 4).prefix(2).unwrap();
        let err = write_records(&[open], Vec::new()).unwrap_err();
        assert!(matches!(err, RecordError::UnfinalizedTrajectory { .. }));
    }

    #[test]
    fn fixture_round_trip() {
        let corpus = vec![fixture("a", 4, 3), fixture("b", 2, 3)];
        let mut buf = Vec::new();
        write_records(&corpus, &mut buf).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn missing_action_is_malformed() {
        let line = r#"{"task_id":"a","split":"train","domain_tag":"d","instruction":"i","t":0,"thought":"","observation":"o","activations":{}}"#;
        let err = read_records(line.as_bytes()).unwrap_err();
        match err {
            RecordError::MalformedRecord { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("action"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_malformed() {
        let corpus = vec![fixture("a", 2, 3)];
        let mut buf = Vec::new();
        write_records(&corpus, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        let doubled = format!("{text}{first}\n");
        let err = read_records(doubled.as_bytes()).unwrap_err();
        assert!(matches!(err, RecordError::MalformedRecord { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn truncated_last_line_is_malformed() {
        let corpus = vec![fixture("a", 3, 3)];
        let mut buf = Vec::new();
        write_records(&corpus, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 10];
        let err = read_records(cut.as_bytes()).unwrap_err();
        assert!(matches!(err, RecordError::MalformedRecord { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn mixed_dims_report_both() {
        let corpus = vec![fixture("a", 2, 3), fixture("b", 2, 5)];
        let mut buf = Vec::new();
        write_records(&corpus, &mut buf).unwrap();
        let err = read_records(buf.as_slice()).unwrap_err();
        match err {
            RecordError::DimensionMismatch { expected, found, line, .. } => {
                assert_eq!((expected, found, line), (3, 5, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gap_in_timesteps_is_malformed() {
        let corpus = vec![fixture("a", 4, 2)];
        let mut buf = Vec::new();
        write_records(&corpus, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let kept: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 1).map(|(_, l)| l).collect();
        let err = read_records(kept.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, RecordError::MalformedRecord { .. }), "{err:?}");
    }

    #[test]
    fn out_of_order_lines_are_regrouped() {
        let corpus = vec![fixture("a", 3, 2), fixture("b", 3, 2)];
        let mut buf = Vec::new();
        write_records(&corpus, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(0, 2);
        lines.swap(1, 4);
        let back = read_records(lines.join("\n").as_bytes()).unwrap();
        assert_eq!(back, corpus);
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<Trajectory>> {
        let step_vals = prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 3);
        let steps = prop::collection::vec(
            (".{0,12}", ".{0,12}", step_vals, prop::option::of(any::<bool>())),
            1..5,
        );
        let episode = (steps, 0.0f64..=1.0, prop::option::of(any::<u64>()));
        prop::collection::vec(episode, 1..4).prop_map(|eps| {
            eps.into_iter()
                .enumerate()
                .map(|(i, (steps, reward, seed))| {
                    let mut task = fixture_task(&format!("task-{i}"));
                    task.seed = seed;
                    let mut tr = Trajectory::new(task);
                    for (t, (thought, action, vals, oracle)) in steps.into_iter().enumerate() {
                        let mut s = StepRecord::new(t as u32, thought, action, "o\n\"quoted\"");
                        s.activations.insert(4, ActivationVector::new(vals).unwrap());
                        s.oracle_success = oracle;
                        tr.push_step(s).unwrap();
                    }
                    tr.finalize(reward).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(corpus in arb_corpus()) {
            let mut first = Vec::new();
            write_records(&corpus, &mut first).unwrap();
            let back = read_records(first.as_slice()).unwrap();
            prop_assert_eq!(&back, &corpus);
            for (a, b) in back.iter().zip(&corpus) {
                for (sa, sb) in a.steps().iter().zip(b.steps()) {
                    for (va, vb) in sa.activations.values().zip(sb.activations.values()) {
                        let bits_a: Vec<u64> = va.values().iter().map(|x| x.to_bits()).collect();
                        let bits_b: Vec<u64> = vb.values().iter().map(|x| x.to_bits()).collect();
                        prop_assert_eq!(bits_a, bits_b);
                    }
                }
            }
            let mut second = Vec::new();
            write_records(&corpus, &mut second).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
