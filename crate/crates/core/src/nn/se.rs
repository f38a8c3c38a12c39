use crate::error::{config, Result};
use crate::tensor::{global_avg_pool, linear, Element, Tensor};

use super::{activation, Activation, Init, ParamCursor, ParamSpec};

/// Weights of the two-layer squeeze-excitation gate.
#[derive(Clone, Debug)]
pub struct SeParams<T: Element = f32> {
    /// `[hidden, C]`
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    /// `[C, hidden]`
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Width of the squeeze-excitation bottleneck: `C / reduction`, at least 1.
pub fn hidden_width(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

impl<T: Element> SeParams<T> {
    pub fn specs(prefix: &str, channels: usize, reduction: usize) -> Vec<ParamSpec> {
        let hidden = hidden_width(channels, reduction);
        vec![
            ParamSpec::new(
                format!("{prefix}.fc1.weight"),
                &[hidden, channels],
                Init::FanIn(channels),
            ),
            ParamSpec::new(
                format!("{prefix}.fc1.bias"),
                &[hidden],
                Init::FanIn(channels),
            ),
            ParamSpec::new(
                format!("{prefix}.fc2.weight"),
                &[channels, hidden],
                Init::FanIn(hidden),
            ),
            ParamSpec::new(
                format!("{prefix}.fc2.bias"),
                &[channels],
                Init::FanIn(hidden),
            ),
        ]
    }

    pub fn from_cursor(
        cursor: &mut ParamCursor<'_, T>,
        channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        let hidden = hidden_width(channels, reduction);
        Ok(Self {
            w1: cursor.next(&[hidden, channels])?,
            b1: cursor.next(&[hidden])?,
            w2: cursor.next(&[channels, hidden])?,
            b2: cursor.next(&[channels])?,
        })
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        vec![
            self.w1.clone(),
            self.b1.clone(),
            self.w2.clone(),
            self.b2.clone(),
        ]
    }
}

/// Rescales each channel of `x` by `sigmoid(W2·act(W1·GAP(x) + b1) + b2)`.
pub fn squeeze_excitation<T: Element>(
    x: &Tensor<T>,
    reduction: usize,
    params: &SeParams<T>,
    act: Activation,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(config(format!(
            "squeeze_excitation expects [N,C,H,W], got {s:?}"
        )));
    }
    let (n, c) = (s[0], s[1]);
    if reduction == 0 || reduction > c {
        return Err(config(format!(
            "squeeze_excitation: reduction {reduction} must lie in [1, {c}]"
        )));
    }
    let squeezed = global_avg_pool(x)?.reshape(&[n, c])?;
    let hidden = activation(&linear(&squeezed, &params.w1, &params.b1)?, act)?;
    let gate = linear(&hidden, &params.w2, &params.b2)?.sigmoid()?;
    x.channel_scale(&gate)
}
