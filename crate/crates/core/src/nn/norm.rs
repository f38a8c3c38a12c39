use crate::error::{config, Result};
use crate::tensor::{BackwardOp, Element, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel scale and shift applied after normalization.
#[derive(Clone, Debug)]
pub struct Affine<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Element> Affine<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
        }
    }
}

struct GroupNormOp<T> {
    dims: [usize; 4],
    groups: usize,
    /// Normalized input, pre-affine.
    xhat: Vec<T>,
    /// 1/σ per (sample, group).
    rstd: Vec<f64>,
}

impl<T: Element> BackwardOp<T> for GroupNormOp<T> {
    fn name(&self) -> &'static str {
        "group_norm"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let [n, c, h, w] = self.dims;
        let plane = h * w;
        let cpg = c / self.groups;
        let gamma = inputs[1].data();

        // Per (sample, channel): Σ dy and Σ dy·x̂.
        let mut sum_g = vec![0.0f64; n * c];
        let mut sum_gx = vec![0.0f64; n * c];
        for nc in 0..n * c {
            let range = nc * plane..(nc + 1) * plane;
            let (mut a, mut b) = (0.0f64, 0.0f64);
            for (&g, &xh) in grad[range.clone()].iter().zip(&self.xhat[range]) {
                let g = g.as_f64();
                a += g;
                b += g * xh.as_f64();
            }
            sum_g[nc] = a;
            sum_gx[nc] = b;
        }
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        for nc in 0..n * c {
            dgamma[nc % c] += sum_gx[nc];
            dbeta[nc % c] += sum_g[nc];
        }

        let gx = inputs[0].requires_grad().then(|| {
            let mut gx = vec![T::zero(); inputs[0].numel()];
            let m = (cpg * plane) as f64;
            for s in 0..n {
                for grp in 0..self.groups {
                    // dx̂ = dy·γ, so its group sums follow from the channel sums.
                    let chans = grp * cpg..(grp + 1) * cpg;
                    let mean_d = chans
                        .clone()
                        .map(|ch| gamma[ch].as_f64() * sum_g[s * c + ch])
                        .sum::<f64>()
                        / m;
                    let mean_dx = chans
                        .clone()
                        .map(|ch| gamma[ch].as_f64() * sum_gx[s * c + ch])
                        .sum::<f64>()
                        / m;
                    let r = self.rstd[s * self.groups + grp];
                    for ch in chans {
                        let range = (s * c + ch) * plane..(s * c + ch + 1) * plane;
                        let gm = gamma[ch].as_f64();
                        for ((o, &g), &xh) in gx[range.clone()]
                            .iter_mut()
                            .zip(&grad[range.clone()])
                            .zip(&self.xhat[range])
                        {
                            *o =
                                T::from_f64(r * (g.as_f64() * gm - mean_d - xh.as_f64() * mean_dx));
                        }
                    }
                }
            }
            gx
        });

        let conv = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect::<Vec<T>>();
        vec![
            gx,
            inputs[1].requires_grad().then(|| conv(dgamma)),
            inputs[2].requires_grad().then(|| conv(dbeta)),
        ]
    }
}

/// Normalizes each (sample, channel-group) of `[N, C, H, W]` to zero mean
/// and unit variance, then applies the per-channel affine transform.
///
/// Statistics are computed in f64 with the biased variance. A constant
/// group normalizes to exactly zero.
pub fn group_norm<T: Element>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(config(format!("group_norm expects [N,C,H,W], got {s:?}")));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if groups == 0 || c % groups != 0 {
        return Err(config(format!(
            "group_norm: {groups} groups do not divide {c} channels"
        )));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(config(format!(
            "group_norm: affine shapes {:?}/{:?}, expected [{c}]",
            gamma.shape(),
            beta.shape()
        )));
    }
    if eps <= 0.0 {
        return Err(config("group_norm: eps must be positive"));
    }
    let plane = h * w;
    let cpg = c / groups;
    let m = (cpg * plane) as f64;
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());

    let mut xhat = vec![T::zero(); xd.len()];
    let mut rstd = vec![0.0f64; n * groups];
    let mut out = vec![T::zero(); xd.len()];
    for smp in 0..n {
        for grp in 0..groups {
            let start = (smp * c + grp * cpg) * plane;
            let end = start + cpg * plane;
            let mean = xd[start..end].iter().map(|v| v.as_f64()).sum::<f64>() / m;
            let var = xd[start..end]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / m;
            let r = 1.0 / (var + eps).sqrt();
            rstd[smp * groups + grp] = r;
            for ch in grp * cpg..(grp + 1) * cpg {
                let range = (smp * c + ch) * plane..(smp * c + ch + 1) * plane;
                let (g, b) = (gd[ch].as_f64(), bd[ch].as_f64());
                for ((o, xh), &v) in out[range.clone()]
                    .iter_mut()
                    .zip(&mut xhat[range.clone()])
                    .zip(&xd[range])
                {
                    let normalized = (v.as_f64() - mean) * r;
                    *xh = T::from_f64(normalized);
                    *o = T::from_f64(normalized * g + b);
                }
            }
        }
    }
    Tensor::from_op(
        s.to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        GroupNormOp {
            dims: [n, c, h, w],
            groups,
            xhat,
            rstd,
        },
    )
}
