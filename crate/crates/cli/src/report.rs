use std::fmt::Write;
use std::path::Path;

use phytnet::eval::{summarize, CVReport, Summary};
use phytnet::train::{EpochMetrics, RunDir};

use crate::commands::{Outcome, Stage};

fn line(out: &mut String, name: &str, s: &Summary) {
    let _ = writeln!(
        out,
        "  {name:<18} median {:.4}  q1 {:.4}  q3 {:.4}  iqr {:.4}  (n={})",
        s.median, s.q1, s.q3, s.iqr, s.n
    );
}

fn class_name(names: &[String], c: usize) -> String {
    names.get(c).cloned().unwrap_or_else(|| format!("class{c}"))
}

/// Per-fold rows followed by fold-level and per-class summaries.
pub fn render_cv(rep: &CVReport, class_names: &[String], run: &Path) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "fold  train_f1  val_f1   gap      best_epoch  stopped_epoch"
    );
    for f in &rep.folds {
        let _ = writeln!(
            out,
            "{:<4}  {:.4}    {:.4}   {:+.4}  {:<10}  {}",
            f.fold, f.train.macro_f1, f.val.macro_f1, f.gap, f.best_epoch, f.stopped_epoch
        );
    }
    let _ = writeln!(
        out,
        "summary over {} folds (macro F1 averaged per class):",
        rep.folds.len()
    );
    for (name, s) in &rep.summaries {
        line(&mut out, name, s);
    }
    let classes = rep.folds.first().map_or(0, |f| f.val.f1.len());
    for c in 0..classes {
        let _ = writeln!(out, "class {}:", class_name(class_names, c));
        for (metric, get) in [
            (
                "val_f1",
                (|f: &phytnet::eval::FoldResult, c: usize| f.val.f1[c]) as fn(&_, usize) -> f64,
            ),
            ("val_precision", |f, c| f.val.precision[c]),
            ("val_recall", |f, c| f.val.recall[c]),
        ] {
            let values: Vec<f64> = rep.folds.iter().map(|f| get(f, c)).collect();
            if let Ok(s) = summarize(&values) {
                line(&mut out, metric, &s);
            }
        }
    }
    for f in &rep.folds {
        let p = RunDir::create(run).map(|r| r.for_fold(f.fold).checkpoint_path());
        if let Some(p) = p.ok().filter(|p| p.exists()) {
            let _ = writeln!(out, "best checkpoint fold {}: {}", f.fold, p.display());
        }
    }
    out
}

/// Median and IQR of every column of `metrics.jsonl`.
pub fn render_metrics(lines: &[EpochMetrics]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "metrics.jsonl: {} epoch lines", lines.len());
    let columns: [(&str, fn(&EpochMetrics) -> f64); 4] = [
        ("train_loss", |m| m.train_loss),
        ("train_f1", |m| m.train_f1),
        ("val_loss", |m| m.val_loss),
        ("val_f1", |m| m.val_f1),
    ];
    for (name, get) in columns {
        if let Ok(s) = summarize(&lines.iter().map(get).collect::<Vec<_>>()) {
            line(&mut out, name, &s);
        }
    }
    out
}

pub fn report(run: &Path) -> Outcome {
    if !run.is_dir() {
        return Err(phytnet::Error::PathNotFound(run.to_path_buf())).stage("reading run");
    }
    let dir = RunDir::create(run).stage("reading run")?;
    let metrics = dir.metrics_path();
    if !metrics.is_file() {
        return Err(phytnet::Error::PathNotFound(metrics)).stage("reading run");
    }
    let lines = dir.read_metrics().stage("reading run")?;
    if lines.is_empty() {
        return Err(phytnet::Error::Data(
            "metrics.jsonl has no epoch lines".into(),
        ))
        .stage("reading run");
    }
    let class_names: Vec<String> = std::fs::read_to_string(run.join("config.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| serde_json::from_value(v["classes"].clone()).ok())
        .unwrap_or_default();
    let cv_path = run.join("cv_report.json");
    if cv_path.is_file() {
        let text = std::fs::read_to_string(&cv_path).stage("reading run")?;
        let rep: CVReport = serde_json::from_str(&text).stage("reading run")?;
        print!("{}", render_cv(&rep, &class_names, run));
    } else {
        let ckpt = dir.checkpoint_path();
        if ckpt.exists() {
            println!("best checkpoint: {}", ckpt.display());
        }
    }
    print!("{}", render_metrics(&lines));
    Ok(())
}
