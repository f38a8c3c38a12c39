use serde::{Deserialize, Serialize};

use super::{BackwardOp, Element, Tensor};
use crate::error::{config, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    /// Padding cells count toward the divisor.
    Avg,
    GlobalAvg,
}

struct MaxPoolOp {
    /// Flat input index chosen for every output element.
    argmax: Vec<usize>,
}

impl<T: Element> BackwardOp<T> for MaxPoolOp {
    fn name(&self) -> &'static str {
        "max_pool"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let mut gx = vec![T::zero(); inputs[0].numel()];
        for (&src, &g) in self.argmax.iter().zip(grad) {
            gx[src] += g;
        }
        vec![Some(gx)]
    }
}

struct AvgPoolOp {
    dims: [usize; 4],
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl<T: Element> BackwardOp<T> for AvgPoolOp {
    fn name(&self) -> &'static str {
        "avg_pool"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [n, c, h, w] = self.dims;
        let inv = T::from_f64(1.0 / (self.k * self.k) as f64);
        let mut gx = vec![T::zero(); inputs[0].numel()];
        for plane in 0..n * c {
            for oy in 0..self.ho {
                for ox in 0..self.wo {
                    let g = grad[(plane * self.ho + oy) * self.wo + ox] * inv;
                    for_each_window_cell(oy, ox, self.k, self.stride, self.pad, h, w, |iy, ix| {
                        gx[(plane * h + iy) * w + ix] += g;
                    });
                }
            }
        }
        vec![Some(gx)]
    }
}

struct GlobalAvgOp {
    plane: usize,
}

impl<T: Element> BackwardOp<T> for GlobalAvgOp {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }
    fn backward(&self, _: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let inv = 1.0 / self.plane as f64;
        let gx = grad
            .iter()
            .flat_map(|&g| std::iter::repeat(T::from_f64(g.as_f64() * inv)).take(self.plane))
            .collect();
        vec![Some(gx)]
    }
}

#[allow(clippy::too_many_arguments)]
fn for_each_window_cell(
    oy: usize,
    ox: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    mut f: impl FnMut(usize, usize),
) {
    for ki in 0..k {
        let iy = (oy * stride + ki) as isize - pad as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for kj in 0..k {
            let ix = (ox * stride + kj) as isize - pad as isize;
            if ix >= 0 && (ix as usize) < w {
                f(iy as usize, ix as usize);
            }
        }
    }
}

/// Spatial mean per channel: `[N, C, H, W] -> [N, C, 1, 1]`.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || s[2] * s[3] == 0 {
        return Err(config(format!(
            "global_avg_pool expects [N,C,H,W] with H,W > 0, got {s:?}"
        )));
    }
    let plane = s[2] * s[3];
    let data = x
        .data()
        .chunks(plane)
        .map(|p| T::from_f64(p.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
        .collect();
    Tensor::from_op(
        vec![s[0], s[1], 1, 1],
        data,
        vec![x.clone()],
        GlobalAvgOp { plane },
    )
}

/// Square-window pooling over `[N, C, H, W]`. `GlobalAvg` ignores
/// `k`, `stride` and `padding`.
pub fn pool2d<T: Element>(
    x: &Tensor<T>,
    kind: PoolKind,
    k: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    if kind == PoolKind::GlobalAvg {
        return global_avg_pool(x);
    }
    let s = x.shape();
    if s.len() != 4 {
        return Err(config(format!("pool2d expects [N,C,H,W], got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if k == 0 || stride == 0 {
        return Err(config("pool2d: window and stride must be positive"));
    }
    if k > h + 2 * padding || k > w + 2 * padding {
        return Err(config(format!(
            "pool2d: window {k} exceeds spatial extent {h}x{w} (padding {padding})"
        )));
    }
    if padding * 2 > k {
        return Err(config("pool2d: padding must be at most half the window"));
    }
    let ho = (h + 2 * padding - k) / stride + 1;
    let wo = (w + 2 * padding - k) / stride + 1;
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    match kind {
        PoolKind::Max => {
            let mut argmax = Vec::with_capacity(n * c * ho * wo);
            for plane in 0..n * c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = T::neg_infinity();
                        let mut at = usize::MAX;
                        for_each_window_cell(oy, ox, k, stride, padding, h, w, |iy, ix| {
                            let idx = (plane * h + iy) * w + ix;
                            if at == usize::MAX || xd[idx] > best {
                                best = xd[idx];
                                at = idx;
                            }
                        });
                        out.push(best);
                        argmax.push(at);
                    }
                }
            }
            Tensor::from_op(
                vec![n, c, ho, wo],
                out,
                vec![x.clone()],
                MaxPoolOp { argmax },
            )
        }
        PoolKind::Avg => {
            let inv = 1.0 / (k * k) as f64;
            for plane in 0..n * c {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0f64;
                        for_each_window_cell(oy, ox, k, stride, padding, h, w, |iy, ix| {
                            acc += xd[(plane * h + iy) * w + ix].as_f64();
                        });
                        out.push(T::from_f64(acc * inv));
                    }
                }
            }
            Tensor::from_op(
                vec![n, c, ho, wo],
                out,
                vec![x.clone()],
                AvgPoolOp {
                    dims: [n, c, h, w],
                    k,
                    stride,
                    pad: padding,
                    ho,
                    wo,
                },
            )
        }
        PoolKind::GlobalAvg => unreachable!(),
    }
}
