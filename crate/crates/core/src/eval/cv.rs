use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arch::{build_model, Model, ModelConfig};
use crate::data::{DatasetManifest, FoldPlan, NormStats, Sample};
use crate::error::{usage, Result};
use crate::train::{evaluate, train, EpochMetrics, FoldData, RunDir, TrainConfig};
use crate::Error;

use super::{summarize, MetricsReport, Summary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Eval-mode metrics on the un-augmented training portion.
    pub train: MetricsReport,
    pub val: MetricsReport,
    /// `train.macro_f1 − val.macro_f1`
    pub gap: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    /// Per-epoch training curve, as logged.
    pub epochs: Vec<EpochMetrics>,
    pub norm: NormStats,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub k: usize,
    pub folds: Vec<FoldResult>,
    /// Distribution of each per-fold metric, keyed by metric name.
    pub summaries: BTreeMap<String, Summary>,
}

impl CVReport {
    fn assemble(k: usize, folds: Vec<FoldResult>) -> Result<Self> {
        let series: [(&str, fn(&FoldResult) -> f64); 5] = [
            ("val_macro_f1", |f| f.val.macro_f1),
            ("val_accuracy", |f| f.val.accuracy),
            ("train_macro_f1", |f| f.train.macro_f1),
            ("train_accuracy", |f| f.train.accuracy),
            ("gap", |f| f.gap),
        ];
        let mut summaries = BTreeMap::new();
        for (name, get) in series {
            summaries.insert(
                name.to_string(),
                summarize(&folds.iter().map(get).collect::<Vec<_>>())?,
            );
        }
        Ok(Self {
            k,
            folds,
            summaries,
        })
    }

    pub fn summary(&self, metric: &str) -> Option<&Summary> {
        self.summaries.get(metric)
    }

    pub fn median_val_f1(&self) -> f64 {
        self.summaries["val_macro_f1"].median
    }

    pub fn median_gap(&self) -> f64 {
        self.summaries["gap"].median
    }
}

/// Trains a fresh model from `builder` on each fold's training portion and
/// scores it on the held-out fold. `samples` are the decoded images of
/// `manifest.samples`, in the same order. Normalization statistics are
/// fitted per fold on its training portion only.
pub fn cross_validate<F>(
    builder: F,
    input_size: usize,
    manifest: &DatasetManifest,
    samples: &[Sample],
    plan: &FoldPlan,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
) -> Result<CVReport>
where
    F: Fn() -> Result<Model<f32>>,
{
    if samples.len() != manifest.len() {
        return Err(usage(format!(
            "{} decoded samples for a manifest of {}",
            samples.len(),
            manifest.len()
        )));
    }
    let nc = manifest.num_classes();
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let wrap = |e: Error| Error::Fold {
            fold,
            source: Box::new(e),
        };
        let result = (|| {
            let (tr, va) = plan.split(manifest, fold)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
            let (tr_s, va_s) = (pick(&tr), pick(&va));
            let data = FoldData::from_samples(&tr_s, &va_s, input_size, nc, cfg)?;
            let mut model = builder()?;
            let fold_run = run.map(|r| r.for_fold(fold));
            let rep = train(&mut model, &data, cfg, fold_run.as_ref())?;
            let plain_train = data.train.clone().shuffled(false).augmented(false);
            let train_metrics = evaluate(&model, &plain_train, nc)?.report;
            let ids = |s: &[&Sample]| s.iter().map(|s| s.source_id.clone()).collect::<Vec<_>>();
            Ok(FoldResult {
                fold,
                gap: train_metrics.macro_f1 - rep.best_val.macro_f1,
                train: train_metrics,
                val: rep.best_val,
                best_epoch: rep.best_epoch,
                stopped_epoch: rep.stopped_epoch,
                epochs: rep.epochs,
                norm: data.norm,
                train_ids: ids(&tr_s),
                val_ids: ids(&va_s),
            })
        })();
        folds.push(result.map_err(wrap)?);
    }
    CVReport::assemble(plan.k, folds)
}

/// [`cross_validate`] with a fresh model built from `model` and the
/// training seed for every fold.
pub fn cross_validate_config(
    model: &ModelConfig,
    manifest: &DatasetManifest,
    samples: &[Sample],
    plan: &FoldPlan,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
) -> Result<CVReport> {
    model.validate()?;
    if model.num_classes != manifest.num_classes() {
        return Err(crate::error::config(format!(
            "model has {} classes, dataset has {}",
            model.num_classes,
            manifest.num_classes()
        )));
    }
    cross_validate(
        || build_model(model, cfg.seed),
        model.input_size,
        manifest,
        samples,
        plan,
        cfg,
        run,
    )
}
