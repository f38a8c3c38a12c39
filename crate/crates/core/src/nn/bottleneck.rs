use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::{conv2d, Element, Tensor};

use super::norm::{group_norm, Affine, DEFAULT_EPS};
use super::se::{squeeze_excitation, SeParams};
use super::stochastic::stochastic_depth;
use super::{activation, conv_spec, norm_specs, Activation, Mode, ParamCursor, ParamSpec};

/// Shape and switches of one residual bottleneck block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel of the middle convolution; odd, 1..=19.
    pub mid_kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub use_se: bool,
    pub se_reduction: usize,
    pub survive_prob: f64,
    pub activation: Activation,
}

impl BlockConfig {
    /// Width of the reduced middle section: `out/4`, at least 1.
    pub fn mid_channels(&self) -> usize {
        (self.out_channels / 4).max(1)
    }

    /// Whether the shortcut needs a strided 1×1 projection.
    pub fn has_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.mid_kernel % 2 == 0 || !(1..=19).contains(&self.mid_kernel) {
            return Err(config(format!(
                "mid_kernel must be odd and in [1, 19], got {}",
                self.mid_kernel
            )));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(config(format!(
                "block stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(config("block channel counts must be positive"));
        }
        if self.groups == 0 {
            return Err(config("groups must be positive"));
        }
        for (what, c) in [("mid", self.mid_channels()), ("out", self.out_channels)] {
            if c % self.groups != 0 {
                return Err(config(format!(
                    "groups = {} does not divide {what} channel count {c}",
                    self.groups
                )));
            }
        }
        if !(self.survive_prob > 0.0 && self.survive_prob <= 1.0) {
            return Err(config(format!(
                "survive_prob {} outside (0, 1]",
                self.survive_prob
            )));
        }
        if self.use_se && (self.se_reduction == 0 || self.se_reduction > self.out_channels) {
            return Err(config(format!(
                "se_reduction {} must lie in [1, {}]",
                self.se_reduction, self.out_channels
            )));
        }
        Ok(())
    }

    /// Parameter layout in the order [`BottleneckParams::from_cursor`] reads it.
    pub fn param_specs(&self, prefix: &str) -> Vec<ParamSpec> {
        let (cin, mid, out, k) = (
            self.in_channels,
            self.mid_channels(),
            self.out_channels,
            self.mid_kernel,
        );
        let mut specs = vec![conv_spec(format!("{prefix}.conv1.weight"), cin, mid, 1)];
        specs.extend(norm_specs(&format!("{prefix}.norm1"), mid));
        specs.push(conv_spec(format!("{prefix}.conv2.weight"), mid, mid, k));
        specs.extend(norm_specs(&format!("{prefix}.norm2"), mid));
        specs.push(conv_spec(format!("{prefix}.conv3.weight"), mid, out, 1));
        specs.extend(norm_specs(&format!("{prefix}.norm3"), out));
        if self.use_se {
            specs.extend(SeParams::<f32>::specs(
                &format!("{prefix}.se"),
                out,
                self.se_reduction,
            ));
        }
        if self.has_projection() {
            specs.push(conv_spec(
                format!("{prefix}.shortcut.conv.weight"),
                cin,
                out,
                1,
            ));
            specs.extend(norm_specs(&format!("{prefix}.shortcut.norm"), out));
        }
        specs
    }
}

#[derive(Clone, Debug)]
pub struct BottleneckParams<T: Element = f32> {
    pub conv1: Tensor<T>,
    pub norm1: Affine<T>,
    pub conv2: Tensor<T>,
    pub norm2: Affine<T>,
    pub conv3: Tensor<T>,
    pub norm3: Affine<T>,
    pub se: Option<SeParams<T>>,
    pub shortcut: Option<(Tensor<T>, Affine<T>)>,
}

impl<T: Element> BottleneckParams<T> {
    pub fn from_cursor(cfg: &BlockConfig, cursor: &mut ParamCursor<'_, T>) -> Result<Self> {
        let (cin, mid, out, k) = (
            cfg.in_channels,
            cfg.mid_channels(),
            cfg.out_channels,
            cfg.mid_kernel,
        );
        Ok(Self {
            conv1: cursor.next(&[mid, cin, 1, 1])?,
            norm1: cursor.affine(mid)?,
            conv2: cursor.next(&[mid, mid, k, k])?,
            norm2: cursor.affine(mid)?,
            conv3: cursor.next(&[out, mid, 1, 1])?,
            norm3: cursor.affine(out)?,
            se: if cfg.use_se {
                Some(SeParams::from_cursor(cursor, out, cfg.se_reduction)?)
            } else {
                None
            },
            shortcut: if cfg.has_projection() {
                Some((cursor.next(&[out, cin, 1, 1])?, cursor.affine(out)?))
            } else {
                None
            },
        })
    }

    /// Freshly initialized parameters for a standalone block.
    pub fn init(cfg: &BlockConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let tensors: Vec<Tensor<T>> = cfg
            .param_specs("block")
            .iter()
            .enumerate()
            .map(|(i, s)| s.init_tensor(&mut rng_for(seed, &[stream::INIT, i as u64])))
            .collect();
        Self::from_cursor(cfg, &mut ParamCursor::new(&tensors))
    }

    /// All tensors, in declaration order.
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        let mut v = vec![
            self.conv1.clone(),
            self.norm1.gamma.clone(),
            self.norm1.beta.clone(),
            self.conv2.clone(),
            self.norm2.gamma.clone(),
            self.norm2.beta.clone(),
            self.conv3.clone(),
            self.norm3.gamma.clone(),
            self.norm3.beta.clone(),
        ];
        if let Some(se) = &self.se {
            v.extend(se.tensors());
        }
        if let Some((w, a)) = &self.shortcut {
            v.extend([w.clone(), a.gamma.clone(), a.beta.clone()]);
        }
        v
    }
}

fn conv_norm<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    norm: &Affine<T>,
    groups: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let y = conv2d(x, w, None, stride, padding)?;
    group_norm(&y, groups, &norm.gamma, &norm.beta, DEFAULT_EPS)
}

/// `act(main(x) + shortcut(x))` where the main branch is
/// 1×1 reduce → GN → act → k×k (strided) → GN → act → 1×1 expand → GN
/// → optional SE → stochastic depth.
pub fn bottleneck_block<T: Element>(
    x: &Tensor<T>,
    cfg: &BlockConfig,
    params: &BottleneckParams<T>,
    mode: Mode<'_>,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    if x.rank() != 4 || x.shape()[1] != cfg.in_channels {
        return Err(config(format!(
            "bottleneck expects [N, {}, H, W], got {:?}",
            cfg.in_channels,
            x.shape()
        )));
    }
    if cfg.has_projection() != params.shortcut.is_some() || cfg.use_se != params.se.is_some() {
        return Err(config(
            "bottleneck parameters do not match the block configuration",
        ));
    }
    let mut mode = mode;
    let act = cfg.activation;
    let g = cfg.groups;

    let h = activation(&conv_norm(x, &params.conv1, &params.norm1, g, 1, 0)?, act)?;
    let h = activation(
        &conv_norm(
            &h,
            &params.conv2,
            &params.norm2,
            g,
            cfg.stride,
            cfg.mid_kernel / 2,
        )?,
        act,
    )?;
    let mut h = conv_norm(&h, &params.conv3, &params.norm3, g, 1, 0)?;
    if let Some(se) = &params.se {
        h = squeeze_excitation(&h, cfg.se_reduction, se, act)?;
    }
    let h = stochastic_depth(&h, cfg.survive_prob, mode.reborrow())?;

    let shortcut = match &params.shortcut {
        Some((w, norm)) => conv_norm(x, w, norm, g, cfg.stride, 0)?,
        None => x.clone(),
    };
    if shortcut.shape() != h.shape() {
        return Err(config(format!(
            "bottleneck branch shapes disagree: {:?} vs {:?}",
            h.shape(),
            shortcut.shape()
        )));
    }
    activation(&h.add(&shortcut)?, act)
}
