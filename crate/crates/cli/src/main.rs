mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "phytnet",
    version,
    about = "Train, cross-validate, sweep and inspect small residual CNNs"
)]
pub struct Cli {
    /// Background threads for batch building and concurrent sweep trials.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the synthetic four-class texture dataset.
    Synth(SynthArgs),
    /// Train one model on a single train/validation split.
    Train(TrainArgs),
    /// Stratified k-fold cross-validation.
    Cv(CvArgs),
    /// Gaussian-process search over architecture and optimizer settings.
    Sweep(SweepArgs),
    /// Class-activation heatmap overlay for one image.
    Gradcam(GradcamArgs),
    /// Parameter count and GFLOPS of a model config.
    Flops(FlopsArgs),
    /// Summarize a run directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root with one sub-directory per class.
    #[arg(long)]
    pub data: PathBuf,
    /// Model config JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Training config JSON; defaults apply when omitted.
    #[arg(long, visible_alias = "train")]
    pub train_cfg: Option<PathBuf>,
    /// Run directory; defaults to a directory under the run root.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the training config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// The held-out fold of a k-fold plan is the validation split.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: u64,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, visible_alias = "train")]
    pub train_cfg: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Sweep definition JSON; the standard bounds apply when omitted.
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub budget: u64,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, visible_alias = "train")]
    pub train_cfg: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub init_random: u64,
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
    pub candidates: u64,
    /// k of the plan whose first fold scores each trial.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: u64,
}

#[derive(Args, Debug)]
pub struct GradcamArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Output node to explain; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
    /// Output PNG path.
    #[arg(long)]
    pub out: PathBuf,
    /// Normalization statistics JSON; defaults to `norm.json` beside the checkpoint.
    #[arg(long)]
    pub norm: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Defaults to the config's own input size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub input_size: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directory written by `train` or `cv`.
    #[arg(long)]
    pub run: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
