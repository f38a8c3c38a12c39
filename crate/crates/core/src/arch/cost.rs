use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::nn::se_hidden_width;
use crate::tensor::Element;

use super::{Layer, Model};

/// Parameter and compute budget of a model at one input size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub n_params: usize,
    /// Multiply-accumulates per sample.
    pub flops: f64,
    pub input_size: usize,
}

impl CostReport {
    pub fn gflops(&self) -> f64 {
        self.flops / 1e9
    }
}

/// Exact number of trainable scalars.
pub fn count_params<T: Element>(m: &Model<T>) -> usize {
    m.param_specs().iter().map(|s| s.numel()).sum()
}

#[derive(Clone, Copy, Debug)]
enum Extent {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize, what: &str) -> Result<usize> {
    if size == 0 || size + 2 * pad < k {
        return Err(config(format!(
            "{what}: spatial size {size} collapses under kernel {k} (padding {pad})"
        )));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

/// Cost of one convolution; returns the MACs and the output size.
fn conv_cost(
    (c, h, w): (usize, usize, usize),
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    what: &str,
) -> Result<(f64, (usize, usize, usize))> {
    let ho = conv_out(h, k, stride, pad, what)?;
    let wo = conv_out(w, k, stride, pad, what)?;
    let macs = (k * k * c * cout) as f64 * (ho * wo) as f64;
    Ok((macs, (cout, ho, wo)))
}

fn spatial(e: Extent, what: &str) -> Result<(usize, usize, usize)> {
    match e {
        Extent::Spatial { c, h, w } => Ok((c, h, w)),
        Extent::Flat(_) => Err(config(format!("{what} needs a spatial input"))),
    }
}

/// Multiply-accumulate count per sample for a square `input_size` image.
/// Convolutions contribute `k²·Cin·Cout·H'·W'` and fully connected layers
/// `Din·Dout`; normalization, activations and pooling are free.
pub fn count_flops<T: Element>(m: &Model<T>, input_size: usize) -> Result<f64> {
    let mut e = Extent::Spatial {
        c: m.in_channels(),
        h: input_size,
        w: input_size,
    };
    let mut total = 0.0;
    for layer in m.layers() {
        e = match layer {
            Layer::Conv {
                name,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (macs, (c, h, w)) = conv_cost(
                    spatial(e, name)?,
                    *out_channels,
                    *kernel,
                    *stride,
                    *padding,
                    name,
                )?;
                total += macs;
                Extent::Spatial { c, h, w }
            }
            Layer::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = spatial(e, "max pool")?;
                Extent::Spatial {
                    c,
                    h: conv_out(h, *kernel, *stride, *padding, "max pool")?,
                    w: conv_out(w, *kernel, *stride, *padding, "max pool")?,
                }
            }
            Layer::Bottleneck { name, block } => {
                let input = spatial(e, name)?;
                let mid = block.mid_channels();
                let k = block.mid_kernel;
                let (a, x1) = conv_cost(input, mid, 1, 1, 0, name)?;
                let (b, x2) = conv_cost(x1, mid, k, block.stride, k / 2, name)?;
                let (c, out) = conv_cost(x2, block.out_channels, 1, 1, 0, name)?;
                total += a + b + c;
                if block.use_se {
                    let hidden = se_hidden_width(block.out_channels, block.se_reduction);
                    total += (2 * hidden * block.out_channels) as f64;
                }
                if block.has_projection() {
                    total += conv_cost(input, block.out_channels, 1, block.stride, 0, name)?.0;
                }
                Extent::Spatial {
                    c: out.0,
                    h: out.1,
                    w: out.2,
                }
            }
            Layer::Basic {
                name,
                in_channels,
                out_channels,
                stride,
                ..
            } => {
                let input = spatial(e, name)?;
                let (a, x1) = conv_cost(input, *out_channels, 3, *stride, 1, name)?;
                let (b, out) = conv_cost(x1, *out_channels, 3, 1, 1, name)?;
                total += a + b;
                if *stride != 1 || in_channels != out_channels {
                    total += conv_cost(input, *out_channels, 1, *stride, 0, name)?.0;
                }
                Extent::Spatial {
                    c: out.0,
                    h: out.1,
                    w: out.2,
                }
            }
            Layer::GlobalPool => Extent::Flat(spatial(e, "global pool")?.0),
            Layer::Linear {
                name,
                in_features,
                out_features,
            } => {
                match e {
                    Extent::Flat(d) if d == *in_features => {}
                    _ => {
                        return Err(config(format!(
                            "{name}: input does not provide {in_features} features"
                        )))
                    }
                }
                total += (in_features * out_features) as f64;
                Extent::Flat(*out_features)
            }
            Layer::Norm { .. } | Layer::Act(_) | Layer::Dropout(_) => e,
        };
    }
    Ok(total)
}

pub fn cost_report<T: Element>(m: &Model<T>, input_size: usize) -> Result<CostReport> {
    Ok(CostReport {
        n_params: count_params(m),
        flops: count_flops(m, input_size)?,
        input_size,
    })
}
