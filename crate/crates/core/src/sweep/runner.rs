use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::build_model;
use crate::data::{DatasetManifest, FoldPlan, Sample};
use crate::error::{data, usage, Result};
use crate::rng::{rng_for, stream};
use crate::train::{train, FoldData, TrainConfig};

use super::gate::GateReason;
use super::gp::{gp_fit, propose_next};
use super::space::{SearchSpace, SweepConfig, SweepSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Proposed,
    GatedOut,
    Trained,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    Random,
    Surrogate,
}

/// One line of the sweep log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial<P> {
    pub index: usize,
    pub config: P,
    pub status: TrialStatus,
    pub val_f1: Option<f64>,
    pub n_params: Option<usize>,
    pub gflops: Option<f64>,
    /// Number of logged trials the proposal was made from.
    pub log_version: usize,
    pub source: ProposalSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gate_reasons: Vec<GateReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub budget: usize,
    /// Random trials before the first surrogate fit.
    pub init_random: usize,
    pub n_candidates: usize,
    pub seed: u64,
    /// Observation noise variance in standardized units.
    pub noise: f64,
    /// Trials evaluated concurrently; proposals within a round share a
    /// log version.
    pub workers: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            budget: 30,
            init_random: 10,
            n_candidates: 512,
            seed: 42,
            noise: 1e-3,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult<P> {
    pub trials: Vec<Trial<P>>,
}

impl<P> SweepResult<P> {
    /// Highest validation F1 among trained trials; the earliest wins ties.
    pub fn best(&self) -> Option<&Trial<P>> {
        best_trial(&self.trials)
    }
}

fn best_trial<P>(trials: &[Trial<P>]) -> Option<&Trial<P>> {
    trials
        .iter()
        .filter(|t| t.status == TrialStatus::Trained)
        .fold(None, |acc: Option<&Trial<P>>, t| match acc {
            Some(b) if b.val_f1 >= t.val_f1 => Some(b),
            _ => Some(t),
        })
}

pub fn read_sweep_log<P: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<Trial<P>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out: Vec<Trial<P>> = Vec::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let t: Trial<P> = serde_json::from_str(line)
            .map_err(|e| data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if t.index != out.len() {
            return Err(data(format!(
                "{}:{}: trial index {} out of sequence, expected {}",
                path.display(),
                n + 1,
                t.index,
                out.len()
            )));
        }
        out.push(t);
    }
    Ok(out)
}

fn append_trial<P: Serialize>(path: &Path, t: &Trial<P>) -> Result<()> {
    let mut line = serde_json::to_string(t)?;
    line.push('\n');
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?
        .write_all(line.as_bytes())?;
    Ok(())
}

/// Log length the proposal for trial `i` conditions on.
fn log_version(i: usize, init: usize, workers: usize) -> usize {
    if i < init {
        i / workers * workers
    } else {
        init + (i - init) / workers * workers
    }
}

fn run_trial<S, F>(space: &S, evaluator: &F, t: &mut Trial<S::Point>)
where
    S: SearchSpace,
    F: Fn(&S::Point) -> Result<f64>,
{
    let verdict = match space.gate(&t.config) {
        Ok(v) => v,
        Err(e) => {
            t.status = TrialStatus::Failed;
            t.error = Some(e.to_string());
            return;
        }
    };
    t.n_params = Some(verdict.n_params);
    t.gflops = Some(verdict.gflops);
    if !verdict.passes() {
        t.status = TrialStatus::GatedOut;
        t.gate_reasons = verdict.reasons;
        return;
    }
    match evaluator(&t.config) {
        Ok(f) if (0.0..=1.0).contains(&f) => {
            t.status = TrialStatus::Trained;
            t.val_f1 = Some(f);
        }
        Ok(f) => {
            t.status = TrialStatus::Failed;
            t.error = Some(format!("evaluator returned {f}, outside [0, 1]"));
        }
        Err(e) => {
            t.status = TrialStatus::Failed;
            t.error = Some(e.to_string());
        }
    }
}

/// Random warm-up followed by surrogate-guided proposals until `budget`
/// trials exist. With a log path, trials already in the log are kept
/// and every new trial is appended as soon as its round finishes; the
/// proposal for trial `i` depends only on the seed, `i` and the trials
/// before its log version, so an interrupted sweep resumes exactly.
pub fn run_sweep<S, F>(
    space: &S,
    evaluator: F,
    opts: &SweepOptions,
    log: Option<&Path>,
) -> Result<SweepResult<S::Point>>
where
    S: SearchSpace,
    F: Fn(&S::Point) -> Result<f64> + Sync,
{
    if opts.init_random == 0 || opts.budget < opts.init_random {
        return Err(usage(format!(
            "sweep needs budget ≥ init_random ≥ 1, got budget {} and init_random {}",
            opts.budget, opts.init_random
        )));
    }
    let workers = opts.workers.max(1);
    let mut trials: Vec<Trial<S::Point>> = match log {
        Some(p) if p.exists() => read_sweep_log(p)?,
        _ => Vec::new(),
    };
    while trials.len() < opts.budget {
        let start = trials.len();
        let version = log_version(start, opts.init_random, workers);
        let mut end = start + 1;
        while end < opts.budget && log_version(end, opts.init_random, workers) == version {
            end += 1;
        }
        let observed: Vec<_> = trials[..version]
            .iter()
            .filter(|t| t.status == TrialStatus::Trained)
            .map(|t| (space.encode(&t.config), t.val_f1.unwrap_or(0.0)))
            .collect();
        let gp = if start >= opts.init_random && !observed.is_empty() {
            let (xs, ys): (Vec<_>, Vec<_>) = observed.into_iter().unzip();
            Some(gp_fit(&xs, &ys, opts.noise)?)
        } else {
            None
        };
        let mut round: Vec<Trial<S::Point>> = (start..end)
            .map(|i| {
                let mut rng = rng_for(opts.seed, &[stream::SWEEP, i as u64]);
                let (config, source) = match &gp {
                    Some(gp) => (
                        propose_next(gp, space, &mut rng, opts.n_candidates),
                        ProposalSource::Surrogate,
                    ),
                    None => (space.sample(&mut rng), ProposalSource::Random),
                };
                Trial {
                    index: i,
                    config,
                    status: TrialStatus::Proposed,
                    val_f1: None,
                    n_params: None,
                    gflops: None,
                    log_version: version,
                    source,
                    gate_reasons: Vec::new(),
                    error: None,
                }
            })
            .collect();
        if round.len() == 1 {
            run_trial(space, &evaluator, &mut round[0]);
        } else {
            std::thread::scope(|s| {
                for t in round.iter_mut() {
                    let ev = &evaluator;
                    s.spawn(move || run_trial(space, ev, t));
                }
            });
        }
        for t in round {
            if let Some(p) = log {
                append_trial(p, &t)?;
            }
            trials.push(t);
        }
    }
    Ok(SweepResult { trials })
}

/// Scores a sweep config by training it on one fold's training portion
/// and returning the best validation macro F1 on that fold.
pub fn holdout_evaluator<'a>(
    space: &'a SweepSpace,
    manifest: &'a DatasetManifest,
    samples: &'a [Sample],
    plan: &'a FoldPlan,
    fold: usize,
    base: &'a TrainConfig,
) -> impl Fn(&SweepConfig) -> Result<f64> + Sync + 'a {
    move |p: &SweepConfig| {
        let model_cfg = space.model_config(p);
        let cfg = p.train_config(base);
        cfg.validate()?;
        let (tr, va) = plan.split(manifest, fold)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
        let data = FoldData::from_samples(
            &pick(&tr),
            &pick(&va),
            model_cfg.input_size,
            manifest.num_classes(),
            &cfg,
        )?;
        let mut model = build_model::<f32>(&model_cfg, cfg.seed)?;
        Ok(train(&mut model, &data, &cfg, None)?.best_val_f1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::UnitBox;

    fn bowl(p: &Vec<f64>) -> Result<f64> {
        Ok(1.0 - p.iter().map(|x| (x - 0.3).powi(2)).sum::<f64>())
    }

    #[test]
    fn budget_and_phases() {
        let opts = SweepOptions {
            budget: 14,
            init_random: 4,
            n_candidates: 64,
            ..SweepOptions::default()
        };
        let r = run_sweep(&UnitBox { dims: 2 }, bowl, &opts, None).unwrap();
        assert_eq!(r.trials.len(), 14);
        assert!(r.trials[..4]
            .iter()
            .all(|t| t.source == ProposalSource::Random));
        assert!(r.trials[4..]
            .iter()
            .all(|t| t.source == ProposalSource::Surrogate));
        assert!(r.trials.iter().enumerate().all(|(i, t)| t.log_version == i));
        let best = r.best().unwrap();
        assert!(r.trials.iter().all(|t| t.val_f1 <= best.val_f1));
    }

    #[test]
    fn failures_are_recorded_and_skipped() {
        let opts = SweepOptions {
            budget: 6,
            init_random: 2,
            n_candidates: 16,
            ..SweepOptions::default()
        };
        let ev = |p: &Vec<f64>| {
            if p[0] < 0.5 {
                Err(crate::error::config("diverged"))
            } else {
                Ok(p[0])
            }
        };
        let r = run_sweep(&UnitBox { dims: 1 }, ev, &opts, None).unwrap();
        for t in &r.trials {
            match t.status {
                TrialStatus::Failed => {
                    assert!(t.val_f1.is_none() && t.error.as_deref().unwrap().contains("diverged"))
                }
                TrialStatus::Trained => assert!(t.config[0] >= 0.5),
                s => panic!("{s:?}"),
            }
        }
    }

    #[test]
    fn out_of_range_score_fails_trial() {
        let opts = SweepOptions {
            budget: 1,
            init_random: 1,
            ..SweepOptions::default()
        };
        let r = run_sweep(&UnitBox { dims: 1 }, |_: &Vec<f64>| Ok(1.5), &opts, None).unwrap();
        assert_eq!(r.trials[0].status, TrialStatus::Failed);
        assert!(r.best().is_none());
    }

    #[test]
    fn bad_budget_is_usage_error() {
        let opts = SweepOptions {
            budget: 3,
            init_random: 5,
            ..SweepOptions::default()
        };
        assert!(run_sweep(&UnitBox { dims: 1 }, bowl, &opts, None).is_err());
    }

    #[test]
    fn resume_reproduces_the_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let full = dir.path().join("full.jsonl");
        let part = dir.path().join("part.jsonl");
        let opts = SweepOptions {
            budget: 12,
            init_random: 4,
            n_candidates: 32,
            workers: 3,
            ..SweepOptions::default()
        };
        let a = run_sweep(&UnitBox { dims: 2 }, bowl, &opts, Some(&full)).unwrap();
        run_sweep(
            &UnitBox { dims: 2 },
            bowl,
            &SweepOptions {
                budget: 7,
                ..opts.clone()
            },
            Some(&part),
        )
        .unwrap();
        let b = run_sweep(&UnitBox { dims: 2 }, bowl, &opts, Some(&part)).unwrap();
        assert_eq!(a.trials, b.trials);
        assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&part).unwrap());
        assert_eq!(read_sweep_log::<Vec<f64>>(&full).unwrap(), a.trials);
        let versions: Vec<usize> = a.trials.iter().map(|t| t.log_version).collect();
        assert_eq!(versions, [0, 0, 0, 3, 4, 4, 4, 7, 7, 7, 10, 10]);
    }
}
