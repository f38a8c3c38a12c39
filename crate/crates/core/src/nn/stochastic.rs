use rand::Rng;

use crate::error::{config, Result};
use crate::tensor::{Element, Tensor};

use super::Mode;

/// Drops the whole residual branch of each sample with probability
/// `1 − survive_prob` in training, scaling survivors by `1/survive_prob`.
/// Identity in eval mode.
pub fn stochastic_depth<T: Element>(
    branch: &Tensor<T>,
    survive_prob: f64,
    mode: Mode<'_>,
) -> Result<Tensor<T>> {
    if !(survive_prob > 0.0 && survive_prob <= 1.0) {
        return Err(config(format!(
            "survive_prob {survive_prob} outside (0, 1]"
        )));
    }
    let rng = match mode {
        Mode::Train(rng) if survive_prob < 1.0 => rng,
        _ => return Ok(branch.clone()),
    };
    let n = branch.shape().first().copied().unwrap_or(0);
    if n == 0 {
        return Ok(branch.clone());
    }
    let per_sample = branch.numel() / n;
    let keep = T::from_f64(1.0 / survive_prob);
    let mut factors = Vec::with_capacity(branch.numel());
    for _ in 0..n {
        let f = if rng.gen_bool(survive_prob) {
            keep
        } else {
            T::zero()
        };
        factors.extend(std::iter::repeat(f).take(per_sample));
    }
    branch.mul_const(factors)
}

/// Zeros each element with probability `rate` in training and scales
/// survivors by `1/(1 − rate)`. Identity in eval mode.
pub fn dropout<T: Element>(x: &Tensor<T>, rate: f64, mode: Mode<'_>) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let rng = match mode {
        Mode::Train(rng) if rate > 0.0 => rng,
        _ => return Ok(x.clone()),
    };
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let factors = (0..x.numel())
        .map(|_| if rng.gen_bool(rate) { T::zero() } else { keep })
        .collect();
    x.mul_const(factors)
}
