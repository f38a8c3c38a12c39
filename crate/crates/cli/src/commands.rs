use std::fmt;
use std::path::{Path, PathBuf};

use phytnet::arch::{build_model, cost_report, load_checkpoint, ModelConfig};
use phytnet::data::{
    decode_image, kfold_split, load_dataset, resize, synthesize_dataset, DatasetManifest,
    NormStats, Sample,
};
use phytnet::eval::{cross_validate_config, grad_cam, overlay, predict_class};
use phytnet::nn::Mode;
use phytnet::sweep::{holdout_evaluator, run_sweep, SweepOptions, SweepSpace};
use phytnet::train::{train, FoldData, RunDir, TrainConfig};
use serde_json::json;

use crate::{Cli, Command, CvArgs, FlopsArgs, GradcamArgs, SweepArgs, SynthArgs, TrainArgs};

pub const RUNS_DIR_ENV: &str = "PHYTNET_RUNS_DIR";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime {
        stage: &'static str,
        source: phytnet::Error,
    },
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime { .. } => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Runtime { stage, source } => write!(f, "{stage}: {source}"),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

/// Tags a library error with the stage that produced it.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Outcome<T>;
}

impl<T, E: Into<phytnet::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime {
            stage,
            source: e.into(),
        })
    }
}

pub fn dispatch(cli: Cli) -> Outcome {
    let workers = cli.workers;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a, workers),
        Command::Cv(a) => cv(a, workers),
        Command::Sweep(a) => sweep(a, workers),
        Command::Gradcam(a) => gradcam(a),
        Command::Flops(a) => flops(a),
        Command::Report(a) => crate::report::report(&a.run),
    }
}

fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn run_dir(out: Option<PathBuf>, default_name: String) -> Outcome<RunDir> {
    let path = out.unwrap_or_else(|| runs_root().join(default_name));
    let run = RunDir::create(&path).stage("creating run directory")?;
    // a rerun replaces the previous log rather than extending it
    let metrics = run.metrics_path();
    if metrics.exists() {
        std::fs::remove_file(&metrics).stage("creating run directory")?;
    }
    Ok(run)
}

/// Reads `root/manifest.json` when present, otherwise scans the class
/// directories.
fn load_data(root: &Path) -> Outcome<(DatasetManifest, Vec<Sample>)> {
    let listed = root.join("manifest.json");
    let mut manifest = if listed.is_file() {
        DatasetManifest::load(&listed).stage("loading dataset")?
    } else {
        load_dataset(root).stage("loading dataset")?
    };
    manifest.root = root.to_path_buf();
    let samples = manifest.load_samples().stage("loading dataset")?;
    Ok((manifest, samples))
}

fn load_train_cfg(path: Option<&Path>, seed: Option<u64>, workers: usize) -> Outcome<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            if !p.exists() {
                return Err(phytnet::Error::PathNotFound(p.to_path_buf()))
                    .stage("reading training config");
            }
            let text = std::fs::read_to_string(p).stage("reading training config")?;
            serde_json::from_str::<TrainConfig>(&text).stage("reading training config")?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.workers = workers;
    cfg.validate().stage("reading training config")?;
    Ok(cfg)
}

fn load_model_cfg(path: &Path, manifest: Option<&DatasetManifest>) -> Outcome<ModelConfig> {
    let cfg = ModelConfig::load(path).stage("reading model config")?;
    if let Some(m) = manifest {
        if cfg.num_classes != m.num_classes() {
            return Err(phytnet::Error::Config(format!(
                "model has {} classes but the dataset has {}",
                cfg.num_classes,
                m.num_classes()
            )))
            .stage("reading model config");
        }
    }
    Ok(cfg)
}

/// `best.ckpt` pairs with `norm.json`, `fold3.best.ckpt` with `fold3.norm.json`.
pub fn norm_path_for(ckpt: &Path) -> PathBuf {
    let name = ckpt
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let prefix = name.strip_suffix("best.ckpt").unwrap_or("");
    ckpt.with_file_name(format!("{prefix}norm.json"))
}

fn synth(a: SynthArgs) -> Outcome {
    let m =
        synthesize_dataset(a.per_class as usize, a.seed, &a.out).stage("synthesizing dataset")?;
    println!(
        "wrote {} images in {} classes to {}",
        m.len(),
        m.num_classes(),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, workers: usize) -> Outcome {
    if a.fold as u64 >= a.k {
        return Err(Failure::Usage(format!(
            "--fold {} must be below --k {}",
            a.fold, a.k
        )));
    }
    let cfg = load_train_cfg(a.train_cfg.as_deref(), a.seed, workers)?;
    let (manifest, samples) = load_data(&a.data)?;
    let model_cfg = load_model_cfg(&a.model, Some(&manifest))?;
    let plan = kfold_split(&manifest, a.k as usize, cfg.seed).stage("splitting folds")?;
    let (tr, va) = plan.split(&manifest, a.fold).stage("splitting folds")?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
    let data = FoldData::from_samples(
        &pick(&tr),
        &pick(&va),
        model_cfg.input_size,
        manifest.num_classes(),
        &cfg,
    )
    .stage("preparing images")?;
    let run = run_dir(a.out, format!("train-seed{}", cfg.seed))?;
    run.write_config(&json!({
        "model": model_cfg,
        "train": cfg,
        "data": a.data,
        "classes": manifest.class_names,
        "k": a.k,
        "fold": a.fold,
    }))
    .stage("writing run files")?;
    run.write_json("norm.json", &data.norm)
        .stage("writing run files")?;
    let mut model = build_model::<f32>(&model_cfg, cfg.seed).stage("building model")?;
    let rep = train(&mut model, &data, &cfg, Some(&run)).stage("training")?;
    run.write_json("train_report.json", &rep)
        .stage("writing run files")?;
    println!(
        "epochs: {} (early stop: {})\nbest epoch: {}\nbest val macro F1: {:.4}\nrun: {}",
        rep.stopped_epoch,
        rep.early_stopped,
        rep.best_epoch,
        rep.best_val_f1,
        run.path().display()
    );
    if let Some(c) = rep.checkpoint {
        println!("checkpoint: {}", c.display());
    }
    Ok(())
}

fn cv(a: CvArgs, workers: usize) -> Outcome {
    let cfg = load_train_cfg(a.train_cfg.as_deref(), Some(a.seed), workers)?;
    let (manifest, samples) = load_data(&a.data)?;
    let model_cfg = load_model_cfg(&a.model, Some(&manifest))?;
    let plan = kfold_split(&manifest, a.k as usize, a.seed).stage("splitting folds")?;
    let run = run_dir(a.out, format!("cv-k{}-seed{}", a.k, a.seed))?;
    run.write_config(&json!({
        "model": model_cfg,
        "train": cfg,
        "data": a.data,
        "classes": manifest.class_names,
        "k": a.k,
    }))
    .stage("writing run files")?;
    let rep = cross_validate_config(&model_cfg, &manifest, &samples, &plan, &cfg, Some(&run))
        .stage("cross-validation")?;
    for f in &rep.folds {
        run.write_json(&format!("fold{}.norm.json", f.fold), &f.norm)
            .stage("writing run files")?;
    }
    run.write_json("cv_report.json", &rep)
        .stage("writing run files")?;
    print!(
        "{}",
        crate::report::render_cv(&rep, &manifest.class_names, run.path())
    );
    Ok(())
}

fn sweep(a: SweepArgs, workers: usize) -> Outcome {
    if a.init_random > a.budget {
        return Err(Failure::Usage(format!(
            "--init-random {} exceeds --budget {}",
            a.init_random, a.budget
        )));
    }
    let mut space = match &a.space {
        Some(p) => SweepSpace::load(p).stage("reading sweep definition")?,
        None => SweepSpace::default(),
    };
    let base = load_train_cfg(a.train_cfg.as_deref(), Some(a.seed), 0)?;
    let (manifest, samples) = load_data(&a.data)?;
    space.num_classes = manifest.num_classes();
    space.validate().stage("reading sweep definition")?;
    let plan = kfold_split(&manifest, a.k as usize, a.seed).stage("splitting folds")?;
    let run = RunDir::create(
        &a.out
            .unwrap_or_else(|| runs_root().join(format!("sweep-seed{}", a.seed))),
    )
    .stage("creating run directory")?;
    run.write_json("space.json", &space)
        .stage("writing run files")?;
    let opts = SweepOptions {
        budget: a.budget as usize,
        init_random: a.init_random as usize,
        n_candidates: a.candidates as usize,
        seed: a.seed,
        workers: workers.max(1),
        ..SweepOptions::default()
    };
    let log = run.path().join("sweep.jsonl");
    let evaluator = holdout_evaluator(&space, &manifest, &samples, &plan, 0, &base);
    let result = run_sweep(&space, evaluator, &opts, Some(&log)).stage("sweep")?;
    let counts = |s| result.trials.iter().filter(|t| t.status == s).count();
    use phytnet::sweep::TrialStatus::*;
    println!(
        "trials: {} (trained {}, gated out {}, failed {})\nlog: {}",
        result.trials.len(),
        counts(Trained),
        counts(GatedOut),
        counts(Failed),
        log.display()
    );
    match result.best() {
        Some(best) => {
            let model = space.model_config(&best.config);
            run.write_json(
                "best.json",
                &json!({ "trial": best, "model": model, "train": best.config.train_config(&base) }),
            )
            .stage("writing run files")?;
            run.write_json("best_model.json", &model)
                .stage("writing run files")?;
            println!(
                "best trial: {} val macro F1 {:.4}, {} params, {:.3} GFLOPS",
                best.index,
                best.val_f1.unwrap_or(0.0),
                best.n_params.unwrap_or(0),
                best.gflops.unwrap_or(0.0)
            );
        }
        None => println!("best trial: none trained"),
    }
    Ok(())
}

fn gradcam(a: GradcamArgs) -> Outcome {
    let model = load_checkpoint(&a.ckpt).stage("loading checkpoint")?;
    let cfg = model
        .config()
        .cloned()
        .ok_or_else(|| phytnet::Error::Checkpoint("checkpoint has no model config".into()))
        .stage("loading checkpoint")?;
    if let Some(c) = a.class {
        if c >= cfg.out_nodes {
            return Err(Failure::Usage(format!(
                "--class {c} must be below the model's {} output nodes",
                cfg.out_nodes
            )));
        }
    }
    let raw = decode_image(&a.image).stage("reading image")?;
    let shown = resize(&raw, cfg.input_size).stage("preprocessing image")?;
    let norm_path = a.norm.clone().unwrap_or_else(|| norm_path_for(&a.ckpt));
    let norm: NormStats = if norm_path.is_file() {
        let text = std::fs::read_to_string(&norm_path).stage("reading normalization statistics")?;
        serde_json::from_str(&text).stage("reading normalization statistics")?
    } else if a.norm.is_some() {
        return Err(phytnet::Error::PathNotFound(norm_path))
            .stage("reading normalization statistics");
    } else {
        NormStats::fit([&shown]).stage("preprocessing image")?
    };
    let input = norm.apply(&shown).stage("preprocessing image")?;
    let batch = input
        .reshape(&[1, 3, cfg.input_size, cfg.input_size])
        .stage("preprocessing image")?;
    let logits = {
        let _g = phytnet::tensor::no_grad();
        model.forward(&batch, Mode::Eval).stage("forward pass")?
    };
    let predicted = predict_class(&logits, cfg.num_classes).stage("forward pass")?[0];
    let target = a.class.unwrap_or(predicted);
    let heat = grad_cam(&model, &input, target).stage("computing heatmap")?;
    overlay(&heat, &shown, &a.out).stage("writing overlay")?;
    println!(
        "predicted class: {predicted}\ntarget class: {target}\nfeature map: {}x{}\nwrote {}",
        heat.source_height,
        heat.source_width,
        a.out.display()
    );
    Ok(())
}

fn flops(a: FlopsArgs) -> Outcome {
    let cfg = load_model_cfg(&a.model, None)?;
    let size = a.input_size.map_or(cfg.input_size, |s| s as usize);
    let model = build_model::<f32>(&cfg, 0).stage("building model")?;
    let cost = cost_report(&model, size).stage("counting cost")?;
    println!(
        "input_size: {size}\nn_params: {}\ngflops: {:.4}",
        cost.n_params,
        cost.gflops()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_file_pairs_with_checkpoint() {
        assert_eq!(
            norm_path_for(Path::new("r/best.ckpt")),
            Path::new("r/norm.json")
        );
        assert_eq!(
            norm_path_for(Path::new("r/fold3.best.ckpt")),
            Path::new("r/fold3.norm.json")
        );
    }
}
