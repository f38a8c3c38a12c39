use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::arch::{save_checkpoint, Model};
use crate::data::{resize, DataLoader, NormStats, Sample};
use crate::error::{config, Result};
use crate::eval::{predict_class, ConfusionMatrix, MetricsReport};
use crate::nn::Mode;
use crate::rng::Prng;
use crate::tensor::{no_grad, softmax_cross_entropy, Tensor};

use super::{
    adamw_step, l1_penalty, set_determinism, EarlyStopping, EpochMetrics, OptimState, RunDir,
    TrainConfig,
};

/// Resizes every image to `size × size` and standardizes it. Statistics
/// are fitted on the resized images unless `stats` is given.
pub fn prepare_images(
    images: &[&Tensor<f32>],
    size: usize,
    stats: Option<&NormStats>,
) -> Result<(Vec<Tensor<f32>>, NormStats)> {
    let resized = images
        .iter()
        .map(|img| resize(img, size))
        .collect::<Result<Vec<_>>>()?;
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(resized.iter())?,
    };
    let out = resized
        .iter()
        .map(|img| stats.apply(img))
        .collect::<Result<_>>()?;
    Ok((out, stats))
}

/// Train and validation streams of one split.
#[derive(Clone)]
pub struct FoldData {
    /// Shuffled and augmented.
    pub train: DataLoader,
    /// Fixed order, no augmentation.
    pub val: DataLoader,
    pub num_classes: usize,
    /// Statistics fitted on the training images and applied to both.
    pub norm: NormStats,
}

impl FoldData {
    pub fn from_samples(
        train: &[&Sample],
        val: &[&Sample],
        input_size: usize,
        num_classes: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(config(format!(
                "split has {} training and {} validation samples; both must be non-empty",
                train.len(),
                val.len()
            )));
        }
        fn imgs<'a>(s: &[&'a Sample]) -> Vec<&'a Tensor<f32>> {
            s.iter().map(|s| &s.image).collect()
        }
        let labels = |s: &[&Sample]| s.iter().map(|s| s.label).collect::<Vec<_>>();
        let (train_imgs, norm) = prepare_images(&imgs(train), input_size, None)?;
        let (val_imgs, _) = prepare_images(&imgs(val), input_size, Some(&norm))?;
        let seed = set_determinism(cfg.seed).loader_seed();
        Ok(Self {
            train: DataLoader::new(train_imgs, labels(train), cfg.batch_size, seed)?
                .shuffled(true)
                .augmented(true)
                .workers(cfg.workers),
            val: DataLoader::new(val_imgs, labels(val), cfg.batch_size, seed)?.workers(cfg.workers),
            num_classes,
            norm,
        })
    }
}

/// Components of one training batch's objective.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    /// The value that was back-propagated, `ce + l1`.
    pub loss: f64,
    pub ce: f64,
    pub l1: f64,
    pub predictions: Vec<usize>,
}

/// Forward, backward and one AdamW update on a single batch.
pub fn train_step(
    model: &mut Model<f32>,
    images: &Tensor<f32>,
    labels: &[usize],
    cfg: &TrainConfig,
    state: &mut OptimState,
    rng: &mut Prng,
    num_classes: usize,
) -> Result<BatchLoss> {
    let logits = model.forward(images, Mode::Train(rng))?;
    let ce = softmax_cross_entropy(&logits, labels)?;
    let l1 = l1_penalty(model.params(), cfg.l1_weight)?;
    let loss = ce.add(&l1)?;
    model.zero_grad();
    loss.backward()?;
    let grads: Vec<Vec<f32>> = model
        .params()
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let updated = adamw_step(model.params(), &grads, state, cfg)?;
    model.set_params(updated)?;
    Ok(BatchLoss {
        loss: loss.item()? as f64,
        ce: ce.item()? as f64,
        l1: l1.item()? as f64,
        predictions: predict_class(&logits, num_classes)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean cross-entropy per sample.
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
    /// Prediction for each sample, in loader order.
    pub predictions: Vec<usize>,
}

/// Eval-mode pass over a loader without gradient tracking.
pub fn evaluate(model: &Model<f32>, loader: &DataLoader, num_classes: usize) -> Result<Evaluation> {
    if loader.is_empty() {
        return Err(config("cannot evaluate on an empty split"));
    }
    let _guard = no_grad();
    let mut cm = ConfusionMatrix::new(num_classes);
    let mut predictions = vec![0; loader.len()];
    let mut total = 0.0;
    for batch in loader.epoch(0) {
        let batch = batch?;
        let logits = model.forward(&batch.images, Mode::Eval)?;
        total += softmax_cross_entropy(&logits, &batch.labels)?.item()? as f64
            * batch.labels.len() as f64;
        let pred = predict_class(&logits, num_classes)?;
        cm.add_all(&batch.labels, &pred)?;
        for (&i, &p) in batch.indices.iter().zip(&pred) {
            predictions[i] = p;
        }
    }
    Ok(Evaluation {
        loss: total / loader.len() as f64,
        report: cm.metrics(),
        confusion: cm,
        predictions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Last epoch trained, 1-based.
    pub stopped_epoch: usize,
    pub early_stopped: bool,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    /// Validation metrics of the kept parameters.
    pub best_val: MetricsReport,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }
}

/// Trains until validation loss stalls for `cfg.patience` epochs or
/// `cfg.max_epochs` is reached. The parameters of the epoch with the
/// highest validation macro F1 are restored into `model` on return and,
/// when `run` is given, saved to its checkpoint path.
pub fn train(
    model: &mut Model<f32>,
    data: &FoldData,
    cfg: &TrainConfig,
    run: Option<&RunDir>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(config(
            "training and validation splits must both be non-empty",
        ));
    }
    let ctx = set_determinism(cfg.seed);
    let nc = data.num_classes;
    let mut state = OptimState::new(model.params());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, MetricsReport, Vec<Tensor<f32>>)> = None;
    let mut early_stopped = false;
    let mut checkpoint = None;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ctx.layer_rng(epoch);
        let mut cm = ConfusionMatrix::new(nc);
        let mut loss_sum = 0.0;
        for batch in data.train.epoch(epoch as u64) {
            let batch = batch?;
            let out = train_step(
                model,
                &batch.images,
                &batch.labels,
                cfg,
                &mut state,
                &mut rng,
                nc,
            )?;
            loss_sum += out.loss * batch.labels.len() as f64;
            cm.add_all(&batch.labels, &out.predictions)?;
        }
        let val = evaluate(model, &data.val, nc)?;
        let m = EpochMetrics {
            fold: run.and_then(RunDir::fold),
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            train_f1: cm.metrics().macro_f1,
            val_loss: val.loss,
            val_f1: val.report.macro_f1,
        };
        if let Some(r) = run {
            r.append_metrics(&m)?;
        }
        epochs.push(m);

        if best.as_ref().is_none_or(|b| val.report.macro_f1 > b.1) {
            if let Some(r) = run {
                save_checkpoint(model, &r.checkpoint_path())?;
                checkpoint = Some(r.checkpoint_path());
            }
            best = Some((
                epoch,
                val.report.macro_f1,
                val.report,
                model.params().to_vec(),
            ));
        }
        if stopper.observe(epoch, val.loss) {
            early_stopped = true;
            break;
        }
    }

    let (best_epoch, best_val_f1, best_val, params) = best.expect("at least one epoch runs");
    model.set_params(params)?;
    Ok(TrainReport {
        stopped_epoch: epochs.len(),
        epochs,
        early_stopped,
        best_epoch,
        best_val_f1,
        best_val,
        checkpoint,
    })
}
