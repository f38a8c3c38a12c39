use std::path::Path;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::arch::{
    ModelConfig, BLOCKS_RANGE, CHANNEL_RANGE, INPUT_SIZE_RANGE, KERNEL_RANGE, OUT_NODES_RANGE,
};
use crate::error::{config, Result};
use crate::nn::Activation;
use crate::rng::Prng;
use crate::train::{TrainConfig, BETA1_RANGE, BETA2_RANGE, LR_RANGE};

use super::gate::{constraint_gate, GateVerdict};

/// A searchable domain: how to draw points, embed them in the unit cube
/// and screen them before evaluation.
pub trait SearchSpace: Sync {
    type Point: Clone + std::fmt::Debug + PartialEq + Serialize + DeserializeOwned + Send + Sync;

    fn dims(&self) -> usize;
    fn sample(&self, rng: &mut Prng) -> Self::Point;
    /// Coordinates in `[0, 1]^dims`.
    fn encode(&self, p: &Self::Point) -> Vec<f64>;
    /// Cost screen run before evaluation; an error marks the trial failed.
    fn gate(&self, _p: &Self::Point) -> Result<GateVerdict> {
        Ok(GateVerdict::free())
    }
}

/// The plain unit cube; points are their own encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitBox {
    pub dims: usize,
}

impl SearchSpace for UnitBox {
    type Point = Vec<f64>;

    fn dims(&self) -> usize {
        self.dims
    }

    fn sample(&self, rng: &mut Prng) -> Vec<f64> {
        (0..self.dims).map(|_| rng.gen::<f64>()).collect()
    }

    fn encode(&self, p: &Vec<f64>) -> Vec<f64> {
        p.clone()
    }
}

fn default_kernel() -> (usize, usize) {
    KERNEL_RANGE
}
fn default_channels() -> (usize, usize) {
    CHANNEL_RANGE
}
fn default_blocks() -> (usize, usize) {
    BLOCKS_RANGE
}
fn default_input() -> (usize, usize) {
    INPUT_SIZE_RANGE
}
fn default_lr() -> (f64, f64) {
    LR_RANGE
}
fn default_out_nodes() -> (usize, usize) {
    OUT_NODES_RANGE
}
fn default_beta1() -> (f64, f64) {
    BETA1_RANGE
}
fn default_beta2() -> (f64, f64) {
    BETA2_RANGE
}
fn default_stages() -> usize {
    4
}
fn default_groups() -> usize {
    4
}
fn default_classes() -> usize {
    4
}

/// Architecture and optimizer search bounds, each an inclusive
/// `[lo, hi]` pair. Every stage shares one channel width and one block
/// count. Channel widths are restricted to multiples of `4·groups` so
/// that bottleneck widths stay divisible by the group count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpace {
    #[serde(default = "default_kernel")]
    pub mid_kernel: (usize, usize),
    #[serde(default = "default_channels")]
    pub channels: (usize, usize),
    #[serde(default = "default_blocks")]
    pub blocks_per_stage: (usize, usize),
    #[serde(default = "default_input")]
    pub input_size: (usize, usize),
    #[serde(default = "default_lr")]
    pub lr: (f64, f64),
    #[serde(default = "default_out_nodes")]
    pub out_nodes: (usize, usize),
    #[serde(default = "default_beta1")]
    pub beta1: (f64, f64),
    #[serde(default = "default_beta2")]
    pub beta2: (f64, f64),
    #[serde(default = "default_stages")]
    pub n_stages: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Permits bounds wider than the standard ranges.
    #[serde(default, rename = "override")]
    pub allow_wider: bool,
}

impl Default for SweepSpace {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

/// One point of a [`SweepSpace`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mid_kernel: usize,
    pub channels: usize,
    pub blocks_per_stage: usize,
    pub input_size: usize,
    pub lr: f64,
    pub out_nodes: usize,
    pub beta1: f64,
    pub beta2: f64,
}

fn int_index(u: f64, n: usize) -> usize {
    ((u * n as f64).floor().max(0.0) as usize).min(n - 1)
}

fn unit(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

impl SweepSpace {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self =
            serde_json::from_str(text).map_err(|e| config(format!("sweep definition: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(crate::Error::PathNotFound(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        fn inside<T: PartialOrd + std::fmt::Display + Copy>(
            name: &str,
            (lo, hi): (T, T),
            (dlo, dhi): (T, T),
            wider: bool,
        ) -> Result<()> {
            if !(lo <= hi) {
                return Err(config(format!(
                    "{name}: lower bound {lo} exceeds upper bound {hi}"
                )));
            }
            if !wider && (lo < dlo || hi > dhi) {
                return Err(config(format!(
                    "{name} = [{lo}, {hi}] leaves [{dlo}, {dhi}]; set \"override\": true to allow it"
                )));
            }
            Ok(())
        }
        let w = self.allow_wider;
        inside("mid_kernel", self.mid_kernel, KERNEL_RANGE, w)?;
        inside("channels", self.channels, CHANNEL_RANGE, w)?;
        inside("blocks_per_stage", self.blocks_per_stage, BLOCKS_RANGE, w)?;
        inside("input_size", self.input_size, INPUT_SIZE_RANGE, w)?;
        inside("lr", self.lr, LR_RANGE, w)?;
        inside("out_nodes", self.out_nodes, OUT_NODES_RANGE, w)?;
        inside("beta1", self.beta1, BETA1_RANGE, w)?;
        inside("beta2", self.beta2, BETA2_RANGE, w)?;
        if !(self.lr.0 > 0.0) {
            return Err(config("lr bounds must be positive"));
        }
        if self.n_stages == 0 || self.groups == 0 || self.num_classes == 0 {
            return Err(config("n_stages, groups and num_classes must be positive"));
        }
        if self.kernels().is_empty() {
            return Err(config(format!(
                "mid_kernel range {:?} holds no odd size",
                self.mid_kernel
            )));
        }
        if self.channel_choices().is_empty() {
            return Err(config(format!(
                "channels range {:?} holds no multiple of {}",
                self.channels,
                4 * self.groups
            )));
        }
        if self.out_node_lo() > self.out_nodes.1 {
            return Err(config(format!(
                "out_nodes range {:?} cannot cover {} classes",
                self.out_nodes, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn kernels(&self) -> Vec<usize> {
        (self.mid_kernel.0..=self.mid_kernel.1)
            .filter(|k| k % 2 == 1)
            .collect()
    }

    pub fn channel_choices(&self) -> Vec<usize> {
        let step = 4 * self.groups;
        (self.channels.0..=self.channels.1)
            .filter(|c| c % step == 0)
            .collect()
    }

    fn out_node_lo(&self) -> usize {
        self.out_nodes.0.max(self.num_classes)
    }

    fn int_ranges(&self) -> [Vec<usize>; 5] {
        let span = |(lo, hi): (usize, usize)| (lo..=hi).collect::<Vec<_>>();
        [
            self.kernels(),
            self.channel_choices(),
            span(self.blocks_per_stage),
            span(self.input_size),
            span((self.out_node_lo(), self.out_nodes.1)),
        ]
    }

    /// Maps a point of `[0, 1]^8` to the config it encodes. Integer
    /// dimensions split the unit interval into equal cells.
    pub fn decode(&self, u: &[f64]) -> SweepConfig {
        let [k, c, b, s, o] = self.int_ranges();
        let pick = |vals: &[usize], x: f64| vals[int_index(x, vals.len())];
        let lin = |(lo, hi): (f64, f64), x: f64| lo + (hi - lo) * x.clamp(0.0, 1.0);
        SweepConfig {
            mid_kernel: pick(&k, u[0]),
            channels: pick(&c, u[1]),
            blocks_per_stage: pick(&b, u[2]),
            input_size: pick(&s, u[3]),
            lr: lin((self.lr.0.ln(), self.lr.1.ln()), u[4]).exp(),
            out_nodes: pick(&o, u[5]),
            beta1: lin(self.beta1, u[6]),
            beta2: lin(self.beta2, u[7]),
        }
    }

    /// Every stage gets `channels` and `blocks_per_stage`; the stem
    /// matches the stage width.
    pub fn model_config(&self, p: &SweepConfig) -> ModelConfig {
        ModelConfig {
            stem_channels: p.channels,
            stage_channels: vec![p.channels; self.n_stages],
            blocks_per_stage: vec![p.blocks_per_stage; self.n_stages],
            mid_kernel: p.mid_kernel,
            out_nodes: p.out_nodes,
            num_classes: self.num_classes,
            input_size: p.input_size,
            groups: self.groups,
            use_se: false,
            se_reduction: 4,
            activation: Activation::default(),
            survive_prob: 1.0,
            dropout_rate: 0.0,
        }
    }
}

impl SweepConfig {
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..base.clone()
        }
    }
}

/// Draws one config: integers uniformly over their valid values,
/// `lr` log-uniformly, the betas uniformly.
pub fn sample_space(space: &SweepSpace, rng: &mut Prng) -> SweepConfig {
    let u: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
    space.decode(&u)
}

impl SearchSpace for SweepSpace {
    type Point = SweepConfig;

    fn dims(&self) -> usize {
        8
    }

    fn sample(&self, rng: &mut Prng) -> SweepConfig {
        sample_space(self, rng)
    }

    fn encode(&self, p: &SweepConfig) -> Vec<f64> {
        let [k, c, b, s, o] = self.int_ranges();
        let cell = |vals: &[usize], v: usize| {
            let i = vals.iter().position(|&x| x >= v).unwrap_or(vals.len() - 1);
            (i as f64 + 0.5) / vals.len() as f64
        };
        vec![
            cell(&k, p.mid_kernel),
            cell(&c, p.channels),
            cell(&b, p.blocks_per_stage),
            cell(&s, p.input_size),
            unit(p.lr.ln(), self.lr.0.ln(), self.lr.1.ln()),
            cell(&o, p.out_nodes),
            unit(p.beta1, self.beta1.0, self.beta1.1),
            unit(p.beta2, self.beta2.0, self.beta2.1),
        ]
    }

    fn gate(&self, p: &SweepConfig) -> Result<GateVerdict> {
        constraint_gate(&self.model_config(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn default_bounds() {
        let s = SweepSpace::default();
        s.validate().unwrap();
        assert_eq!(s.kernels(), [1, 3, 5, 7, 9, 11, 13, 15, 17, 19]);
        assert_eq!(s.channel_choices(), [16, 32, 48, 64, 80, 96, 112, 128]);
        assert_eq!(
            (s.lr, s.beta1, s.beta2),
            ((1e-6, 1e-3), (0.88, 0.99), (0.93, 0.999))
        );
        assert_eq!(
            (s.input_size, s.out_nodes, s.blocks_per_stage),
            ((200, 500), (4, 10), (1, 4))
        );
    }

    #[test]
    fn samples_in_bounds_and_buildable() {
        let s = SweepSpace::default();
        let mut rng = rng_for(3, &[]);
        for _ in 0..1000 {
            let p = sample_space(&s, &mut rng);
            assert!(p.mid_kernel % 2 == 1 && (1..=19).contains(&p.mid_kernel));
            assert!((16..=128).contains(&p.channels));
            assert!((1..=4).contains(&p.blocks_per_stage));
            assert!((200..=500).contains(&p.input_size));
            assert!((4..=10).contains(&p.out_nodes));
            assert!((1e-6..=1e-3).contains(&p.lr));
            assert!((0.88..=0.99).contains(&p.beta1) && (0.93..=0.999).contains(&p.beta2));
            s.model_config(&p).validate().unwrap();
            p.train_config(&TrainConfig::default()).validate().unwrap();
        }
    }

    #[test]
    fn lr_is_log_uniform() {
        let s = SweepSpace::default();
        let mut rng = rng_for(5, &[]);
        let n = 30_000;
        let lrs: Vec<f64> = (0..n).map(|_| sample_space(&s, &mut rng).lr).collect();
        let low = lrs.iter().filter(|&&v| v <= 1e-5).count() as f64 / n as f64;
        let high = lrs.iter().filter(|&&v| v >= 1e-4).count() as f64 / n as f64;
        // each decade holds a third; 4 standard errors of slack
        let se = (1.0f64 / 3.0 * 2.0 / 3.0 / n as f64).sqrt();
        assert!((low - 1.0 / 3.0).abs() < 4.0 * se, "{low}");
        assert!((high - 1.0 / 3.0).abs() < 4.0 * se, "{high}");
    }

    #[test]
    fn encode_decode_round_trip() {
        let s = SweepSpace::default();
        let mut rng = rng_for(8, &[]);
        for _ in 0..200 {
            let p = sample_space(&s, &mut rng);
            let u = s.encode(&p);
            assert!(u.iter().all(|x| (0.0..=1.0).contains(x)));
            let q = s.decode(&u);
            assert_eq!(
                (
                    q.mid_kernel,
                    q.channels,
                    q.blocks_per_stage,
                    q.input_size,
                    q.out_nodes
                ),
                (
                    p.mid_kernel,
                    p.channels,
                    p.blocks_per_stage,
                    p.input_size,
                    p.out_nodes
                )
            );
            assert!((q.lr / p.lr - 1.0).abs() < 1e-9 && (q.beta1 - p.beta1).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_seed_repeats() {
        let s = SweepSpace::default();
        let a: Vec<_> = (0..5)
            .map({
                let mut r = rng_for(1, &[]);
                move |_| sample_space(&s, &mut r)
            })
            .collect();
        let mut r = rng_for(1, &[]);
        let b: Vec<_> = (0..5)
            .map(|_| sample_space(&SweepSpace::default(), &mut r))
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn wider_bounds_need_override() {
        let e = SweepSpace::from_json(r#"{"lr": [1e-7, 1e-3]}"#).unwrap_err();
        assert!(e.to_string().contains("override"), "{e}");
        let s = SweepSpace::from_json(r#"{"lr": [1e-7, 1e-3], "override": true}"#).unwrap();
        assert_eq!(s.lr.0, 1e-7);
        assert!(SweepSpace::from_json(r#"{"mid_kernel": [4, 4]}"#).is_err());
        assert!(SweepSpace::from_json(r#"{"bogus": 1}"#).is_err());
        let narrow = SweepSpace::from_json(r#"{"input_size": [200, 240], "n_stages": 2}"#).unwrap();
        assert_eq!(narrow.n_stages, 2);
    }
}
