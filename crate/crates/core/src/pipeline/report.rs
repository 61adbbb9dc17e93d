//! Plain-text and CSV report bundle. Contents depend only on the stage
//! artifacts, never on wall-clock time or paths.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{CalibrationTruth, LabelSource, PipelineConfig};
use super::stages::{LabelArtifact, ProbeArtifact, SteerArtifact};
use super::PipelineError;
use crate::conformal::{AuditReport, CalibrationStore, Thresholds};
use crate::probe::{Metric, MetricsGrid};

/// `(file name, contents)` pairs in a fixed order.
pub type Bundle = Vec<(String, String)>;

fn slack(eps: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        3.0 * (eps * (1.0 - eps) / n as f64).sqrt()
    }
}

fn audit_row(name: &str, cell: &str, a: &AuditReport, thr: &Thresholds) -> [String; 11] {
    let ok_s = a.fnr <= thr.eps_s + slack(thr.eps_s, a.n_success);
    let ok_f = a.fpr <= thr.eps_f + slack(thr.eps_f, a.n_failure);
    [
        name.to_string(),
        cell.to_string(),
        a.n_success.to_string(),
        a.n_failure.to_string(),
        format!("{:.4}", a.fnr),
        format!("{:.3}", thr.eps_s),
        format!("{:.4}", a.fpr),
        format!("{:.3}", thr.eps_f),
        format!("{:.4}", a.abstain_rate),
        format!("{:.4}", slack(thr.eps_s.max(thr.eps_f), a.n_success.min(a.n_failure))),
        if ok_s && ok_f { "within" } else { "over" }.to_string(),
    ]
}

const AUDIT_HEADER: [&str; 11] =
    ["t", "cell", "n_success", "n_failure", "fnr", "bound_s", "fpr", "bound_f", "abstain", "slack", "status"];

pub fn audit_rows(labels: &LabelArtifact, thr: &Thresholds) -> Vec<[String; 11]> {
    let mut rows: Vec<[String; 11]> = labels
        .audit_by_timestep
        .iter()
        .map(|(t, a)| {
            let cell = if labels.pooled_timesteps.contains(t) { "pooled" } else { "timestep" };
            audit_row(&t.to_string(), cell, a, thr)
        })
        .collect();
    rows.push(audit_row("all", "mixed", &labels.audit_pooled, thr));
    rows
}

fn csv(header: &[&str], rows: &[[String; 11]]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

fn aligned(header: &[&str], rows: &[[String; 11]]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            + "\n"
    };
    let mut out = line(header.to_vec());
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn fmt_mean(m: Option<f64>) -> String {
    m.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

fn grid_files(bundle: &mut Bundle, stem: &str, title: &str, grid: &MetricsGrid) {
    for (metric, name, label) in [(Metric::Accuracy, "accuracy", "Accuracy (%)"), (Metric::F1, "f1", "F1")] {
        bundle.push((format!("{name}_{stem}.csv"), grid.to_csv(metric)));
        let s = grid.summary();
        let mean = match metric {
            Metric::Accuracy => s.mean_accuracy,
            Metric::F1 => s.mean_f1,
        };
        bundle.push((
            format!("{name}_{stem}.txt"),
            format!(
                "{label} of linear probes, {title}\n\n{}\nmean over {} cells: {}\n",
                grid.to_table(metric),
                s.n_cells,
                fmt_mean(mean)
            ),
        ));
    }
}

fn steering_text(steer: &SteerArtifact) -> String {
    let mut out = String::from("Steering summary\n\n");
    let steps: Vec<String> = steer.spec.timesteps.iter().map(u32::to_string).collect();
    let _ = writeln!(out, "layer            {}", steer.spec.layer);
    let _ = writeln!(out, "timesteps        {}", steps.join(","));
    let _ = writeln!(out, "coefficient      {}", steer.spec.coefficient);
    let _ = writeln!(out, "direction from   {} success / {} failure examples", steer.vector.n_success, steer.vector.n_failure);
    if let Some(c) = steer.cosine_to_truth {
        let _ = writeln!(out, "cosine to truth  {c:.4}");
    }
    match &steer.result {
        Some(r) => {
            let _ = writeln!(out, "episodes         {}", r.n_episodes);
            let _ = writeln!(out, "baseline         {:.3}", r.baseline_success);
            let _ = writeln!(out, "steered          {:.3}", r.steered_success);
            let _ = writeln!(out, "lift             {:.3}", r.lift);
            let _ = writeln!(out, "ci95             [{:.3}, {:.3}]", r.ci95.0, r.ci95.1);
        }
        None => {
            let _ = writeln!(out, "closed loop      not run");
        }
    }
    if let Some(n) = &steer.note {
        let _ = writeln!(out, "note             {n}");
    }
    out
}

/// Assembles the report bundle.
pub fn build(
    cfg: &PipelineConfig,
    store: &CalibrationStore,
    labels: &LabelArtifact,
    probes: &ProbeArtifact,
    steer: &SteerArtifact,
) -> Bundle {
    let mut bundle = Bundle::new();
    grid_files(&mut bundle, "id_conformal", "in-distribution test set, conformal labels", &probes.id_conformal);
    if let Some(g) = &probes.id_oracle {
        grid_files(&mut bundle, "id_oracle", "in-distribution test set, ground-truth labels", g);
    }
    if let Some(g) = &probes.ood_conformal {
        grid_files(&mut bundle, "ood_conformal", "out-of-distribution test set, conformal labels", g);
    }
    if let Some(g) = &probes.ood_oracle {
        grid_files(&mut bundle, "ood_oracle", "out-of-distribution test set, ground-truth labels", g);
    }

    let rows = audit_rows(labels, &cfg.thresholds);
    bundle.push(("audit.csv".into(), csv(&AUDIT_HEADER, &rows)));
    bundle.push((
        "audit.txt".into(),
        format!(
            "Conformal error-rate audit on the in-distribution test set\n\n{}",
            aligned(&AUDIT_HEADER, &rows)
        ),
    ));
    bundle.push(("steering.txt".into(), steering_text(steer)));
    if let Some(c) = &probes.comparison {
        bundle.push((
            "comparison.txt".into(),
            format!(
                "Mean probe accuracy, in-distribution test set, conformal labels\n\n{:<8} {}\n{:<8} {}\n",
                c.primary.as_str(),
                fmt_mean(c.primary_mean_accuracy),
                c.other.as_str(),
                fmt_mean(c.other_mean_accuracy)
            ),
        ));
    }

    let mut summary = String::from("Run summary\n\n");
    let _ = writeln!(summary, "environment        {}", cfg.kind().as_str());
    let _ = writeln!(summary, "master seed        {}", cfg.master_seed);
    let _ = writeln!(summary, "eps_s / eps_f      {} / {}", cfg.thresholds.eps_s, cfg.thresholds.eps_f);
    let _ = writeln!(summary, "calibration cells  {} timestep cells + pooled", store.per_timestep().len());
    let _ = writeln!(
        summary,
        "calibration sizes  {} success / {} failure",
        store.pooled().success_scores.len(),
        store.pooled().failure_scores.len()
    );
    let counts = labels.labels.iter().fold([0usize; 3], |mut acc, r| {
        acc[r.label as usize] += 1;
        acc
    });
    let _ = writeln!(summary, "step labels        {} success / {} failure / {} abstain", counts[0], counts[1], counts[2]);
    let _ = writeln!(summary, "trained probes     {}", probes.grid.n_trained());
    let s = probes.id_conformal.summary();
    let _ = writeln!(summary, "mean accuracy      {} (test-id, conformal labels)", fmt_mean(s.mean_accuracy));
    summary.push_str("\nNotes\n\n");
    summary.push_str("- F1 treats Success as the positive class.\n");
    summary.push_str("- Abstain steps are excluded from probe training, probe scoring and error-rate numerators.\n");
    summary.push_str(match cfg.label_source {
        LabelSource::Conformal => "- Probes were trained on conformal labels.\n",
        LabelSource::Oracle => "- Probes were trained on ground-truth labels.\n",
    });
    summary.push_str(match cfg.calibration_truth {
        CalibrationTruth::Oracle => "- Calibration truth is the per-step oracle; steps without one use the episode outcome.\n",
        CalibrationTruth::FinalOutcome => "- Calibration truth is the episode outcome applied to every step.\n",
    });
    if !labels.pooled_timesteps.is_empty() {
        let ts: Vec<String> = labels.pooled_timesteps.iter().map(u32::to_string).collect();
        let _ = writeln!(summary, "- Pooled calibration was used at t = {}.", ts.join(", "));
    }
    bundle.push(("summary.txt".into(), summary));
    bundle
}

pub fn write(dir: &Path, bundle: &Bundle) -> Result<(), PipelineError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))?;
    for (name, text) in bundle {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
