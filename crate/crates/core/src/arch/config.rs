use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::nn::{Activation, BlockConfig};

pub const CHANNEL_RANGE: (usize, usize) = (16, 128);
pub const BLOCKS_RANGE: (usize, usize) = (1, 4);
pub const KERNEL_RANGE: (usize, usize) = (1, 19);
pub const OUT_NODES_RANGE: (usize, usize) = (4, 10);
pub const INPUT_SIZE_RANGE: (usize, usize) = (200, 500);

fn default_groups() -> usize {
    8
}
fn default_survive() -> f64 {
    1.0
}
fn default_se_reduction() -> usize {
    4
}

/// Architecture description of one network in the family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub mid_kernel: usize,
    pub out_nodes: usize,
    pub num_classes: usize,
    pub input_size: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default)]
    pub use_se: bool,
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_survive")]
    pub survive_prob: f64,
    #[serde(default)]
    pub dropout_rate: f64,
}

fn check_range(field: &str, value: usize, (lo, hi): (usize, usize)) -> Result<()> {
    if value < lo || value > hi {
        return Err(config(format!("{field} = {value} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl ModelConfig {
    /// One stage, one block, 16 channels at the smallest input size.
    pub fn minimal(num_classes: usize) -> Self {
        Self {
            stem_channels: 16,
            stage_channels: vec![16],
            blocks_per_stage: vec![1],
            mid_kernel: 3,
            out_nodes: num_classes.max(OUT_NODES_RANGE.0),
            num_classes,
            input_size: INPUT_SIZE_RANGE.0,
            groups: 4,
            use_se: false,
            se_reduction: default_se_reduction(),
            activation: Activation::default(),
            survive_prob: 1.0,
            dropout_rate: 0.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(crate::Error::PathNotFound(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field, naming the first one that fails.
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(config("stage_channels must not be empty"));
        }
        if self.stage_channels.len() != self.blocks_per_stage.len() {
            return Err(config(format!(
                "stage_channels has {} entries but blocks_per_stage has {}",
                self.stage_channels.len(),
                self.blocks_per_stage.len()
            )));
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            check_range(&format!("stage_channels[{i}]"), c, CHANNEL_RANGE)?;
        }
        for (i, &b) in self.blocks_per_stage.iter().enumerate() {
            check_range(&format!("blocks_per_stage[{i}]"), b, BLOCKS_RANGE)?;
        }
        check_range("mid_kernel", self.mid_kernel, KERNEL_RANGE)?;
        if self.mid_kernel % 2 == 0 {
            return Err(config(format!(
                "mid_kernel = {} must be odd",
                self.mid_kernel
            )));
        }
        check_range("out_nodes", self.out_nodes, OUT_NODES_RANGE)?;
        check_range("input_size", self.input_size, INPUT_SIZE_RANGE)?;
        if self.num_classes == 0 {
            return Err(config("num_classes must be at least 1"));
        }
        if self.out_nodes < self.num_classes {
            return Err(config(format!(
                "out_nodes = {} is smaller than num_classes = {}",
                self.out_nodes, self.num_classes
            )));
        }
        if self.groups == 0 {
            return Err(config("groups must be positive"));
        }
        if self.stem_channels == 0 || self.stem_channels % self.groups != 0 {
            return Err(config(format!(
                "stem_channels = {} is not divisible by groups = {}",
                self.stem_channels, self.groups
            )));
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            if c % self.groups != 0 {
                return Err(config(format!(
                    "stage_channels[{i}] = {c} is not divisible by groups = {}",
                    self.groups
                )));
            }
            let mid = (c / 4).max(1);
            if mid % self.groups != 0 {
                return Err(config(format!(
                    "stage_channels[{i}] = {c} gives bottleneck width {mid}, not divisible by groups = {}",
                    self.groups
                )));
            }
        }
        if !(self.survive_prob > 0.0 && self.survive_prob <= 1.0) {
            return Err(config(format!(
                "survive_prob = {} outside (0, 1]",
                self.survive_prob
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(config(format!(
                "dropout_rate = {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.use_se {
            let narrowest = self.stage_channels.iter().copied().min().unwrap_or(0);
            if self.se_reduction == 0 || self.se_reduction > narrowest {
                return Err(config(format!(
                    "se_reduction = {} must lie in [1, {narrowest}]",
                    self.se_reduction
                )));
            }
        }
        Ok(())
    }

    /// Block configurations in network order, paired with their stage index.
    pub fn blocks(&self) -> Vec<(usize, BlockConfig)> {
        let mut out = Vec::new();
        let mut cin = self.stem_channels;
        for (stage, (&cout, &n)) in self
            .stage_channels
            .iter()
            .zip(&self.blocks_per_stage)
            .enumerate()
        {
            for b in 0..n {
                out.push((
                    stage,
                    BlockConfig {
                        in_channels: cin,
                        out_channels: cout,
                        mid_kernel: self.mid_kernel,
                        stride: if b == 0 && stage > 0 { 2 } else { 1 },
                        groups: self.groups,
                        use_se: self.use_se,
                        se_reduction: self.se_reduction,
                        survive_prob: self.survive_prob,
                        activation: self.activation,
                    },
                ));
                cin = cout;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_is_valid_and_round_trips() {
        let c = ModelConfig::minimal(4);
        c.validate().unwrap();
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn defaults_fill_optional_switches() {
        let c = ModelConfig::from_json(
            r#"{"stem_channels":32,"stage_channels":[32,64],"blocks_per_stage":[1,2],
                "mid_kernel":5,"out_nodes":8,"num_classes":4,"input_size":256}"#,
        )
        .unwrap();
        assert_eq!(c.groups, 8);
        assert_eq!(c.activation, Activation::Gelu);
        assert!(!c.use_se);
        assert_eq!(c.survive_prob, 1.0);
        assert_eq!(c.dropout_rate, 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v = serde_json::to_value(ModelConfig::minimal(4)).unwrap();
        v["depth"] = 3.into();
        assert!(ModelConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn failing_field_is_named() {
        let cases: Vec<(fn(&mut ModelConfig), &str)> = vec![
            (|c| c.stage_channels = vec![12], "stage_channels[0]"),
            (|c| c.blocks_per_stage = vec![5], "blocks_per_stage[0]"),
            (|c| c.mid_kernel = 4, "mid_kernel"),
            (|c| c.mid_kernel = 21, "mid_kernel"),
            (|c| c.out_nodes = 11, "out_nodes"),
            (|c| c.num_classes = 6, "num_classes"),
            (|c| c.input_size = 100, "input_size"),
            (|c| c.groups = 8, "groups"),
            (|c| c.blocks_per_stage = vec![1, 1], "blocks_per_stage"),
            (|c| c.survive_prob = 0.0, "survive_prob"),
            (|c| c.dropout_rate = 1.0, "dropout_rate"),
        ];
        for (mutate, field) in cases {
            let mut c = ModelConfig::minimal(4);
            mutate(&mut c);
            let msg = c.validate().unwrap_err().to_string();
            assert!(msg.contains(field), "{msg} should mention {field}");
        }
    }

    #[test]
    fn stage_layout_strides() {
        let mut c = ModelConfig::minimal(4);
        c.stage_channels = vec![16, 32, 64];
        c.blocks_per_stage = vec![2, 1, 2];
        let blocks = c.blocks();
        let strides: Vec<usize> = blocks.iter().map(|(_, b)| b.stride).collect();
        assert_eq!(strides, [1, 1, 2, 2, 1]);
        assert_eq!(blocks[2].1.in_channels, 16);
        assert_eq!(blocks[2].1.out_channels, 32);
        assert_eq!(blocks[4].1.in_channels, 64);
    }
}
