use super::{linalg::matmul, BackwardOp, Element, Tensor};
use crate::error::{config, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn l(&self) -> usize {
        self.ho * self.wo
    }
    /// Output columns `lo..hi` whose tap `kj` lands inside the input row.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = if self.pad > kj {
            (self.pad - kj).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.pad > kj {
            ((self.w + self.pad - kj - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one sample `[cin, h, w]` into `[cin·kh·kw, ho·wo]`.
fn im2col<T: Element>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let l = g.l();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let (lo, hi) = g.valid_cols(kj);
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let first = lo + kj - g.pad;
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (ox, o) in out_row[lo..hi].iter_mut().enumerate() {
                            *o = src[(lo + ox) * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto `[cin, h, w]`.
fn col2im<T: Element>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let l = g.l();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * l..(row + 1) * l];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let (lo, hi) = g.valid_cols(kj);
                    for ox in lo..hi {
                        dst[ox * g.stride + kj - g.pad] += src[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    g: Geometry,
    n: usize,
    cout: usize,
}

impl<T: Element> BackwardOp<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &[T], grad: &[T]) -> Vec<Option<Vec<T>>> {
        let g = &self.g;
        let (k, l, cout) = (g.k(), g.l(), self.cout);
        let x = inputs[0].data();
        let w = inputs[1].data();
        let in_plane = g.cin * g.h * g.w;
        let out_plane = cout * l;

        let want_x = inputs[0].requires_grad();
        let want_w = inputs[1].requires_grad();
        let want_b = inputs.get(2).is_some_and(|b| b.requires_grad());

        let mut gx = want_x.then(|| vec![T::zero(); x.len()]);
        let mut gw = want_w.then(|| vec![T::zero(); w.len()]);
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * l]
        };
        let mut dcols = if want_x && !g.is_pointwise() {
            vec![T::zero(); k * l]
        } else {
            Vec::new()
        };

        for n in 0..self.n {
            let gout = &grad[n * out_plane..(n + 1) * out_plane];
            if let Some(gw) = gw.as_mut() {
                let xcols: &[T] = if g.is_pointwise() {
                    &x[n * in_plane..(n + 1) * in_plane]
                } else {
                    im2col(&x[n * in_plane..(n + 1) * in_plane], g, &mut cols);
                    &cols
                };
                // dW[cout, k] += gout[cout, l] · colsᵀ[l, k]
                matmul(gout, false, xcols, true, gw, cout, l, k, T::one());
            }
            if let Some(gx) = gx.as_mut() {
                let dst = &mut gx[n * in_plane..(n + 1) * in_plane];
                if g.is_pointwise() {
                    matmul(w, true, gout, false, dst, k, cout, l, T::zero());
                } else {
                    matmul(w, true, gout, false, &mut dcols, k, cout, l, T::zero());
                    col2im(&dcols, g, dst);
                }
            }
        }

        let mut out = vec![gx, gw];
        if inputs.len() > 2 {
            let gb = want_b.then(|| {
                (0..cout)
                    .map(|c| {
                        let s: f64 = (0..self.n)
                            .flat_map(|n| {
                                grad[n * out_plane + c * l..n * out_plane + (c + 1) * l].iter()
                            })
                            .map(|v| v.as_f64())
                            .sum();
                        T::from_f64(s)
                    })
                    .collect()
            });
            out.push(gb);
        }
        out
    }
}

/// 2-D cross-correlation over `[N, Cin, H, W]` with weights
/// `[Cout, Cin, kh, kw]`, an optional `[Cout]` bias, symmetric zero
/// padding and equal strides.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(config(format!(
            "conv2d expects rank-4 input and weight, got {xs:?} and {ws:?}"
        )));
    }
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if wcin != cin {
        return Err(config(format!(
            "conv2d: input has {cin} channels but weight expects {wcin}"
        )));
    }
    if kh == 0 || kw == 0 || stride == 0 {
        return Err(config("conv2d: kernel and stride must be positive"));
    }
    if h + 2 * padding < kh || wd + 2 * padding < kw {
        return Err(config(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            wd + 2 * padding
        )));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(config(format!(
                "conv2d: bias shape {:?}, expected [{cout}]",
                b.shape()
            )));
        }
    }
    let g = Geometry {
        cin,
        h,
        w: wd,
        kh,
        kw,
        stride,
        pad: padding,
        ho: (h + 2 * padding - kh) / stride + 1,
        wo: (wd + 2 * padding - kw) / stride + 1,
    };
    let (k, l) = (g.k(), g.l());
    let in_plane = cin * h * wd;
    let mut out = vec![T::zero(); n * cout * l];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * l]
    };
    for s in 0..n {
        let xin = &x.data()[s * in_plane..(s + 1) * in_plane];
        let xcols: &[T] = if g.is_pointwise() {
            xin
        } else {
            im2col(xin, &g, &mut cols);
            &cols
        };
        let dst = &mut out[s * cout * l..(s + 1) * cout * l];
        if let Some(b) = b {
            for (c, &bv) in b.data().iter().enumerate() {
                dst[c * l..(c + 1) * l].fill(bv);
            }
            matmul(w.data(), false, xcols, false, dst, cout, k, l, T::one());
        } else {
            matmul(w.data(), false, xcols, false, dst, cout, k, l, T::zero());
        }
    }
    let mut inputs = vec![x.clone(), w.clone()];
    if let Some(b) = b {
        inputs.push(b.clone());
    }
    Tensor::from_op(
        vec![n, cout, g.ho, g.wo],
        out,
        inputs,
        Conv2dOp { g, n, cout },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check_many;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Six nested loops, no tricks.
    fn naive_conv(
        x: &[f64],
        xs: [usize; 4],
        w: &[f64],
        ws: [usize; 4],
        b: &[f64],
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let [n, cin, h, wd] = xs;
        let [cout, _, kh, kw] = ws;
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * cout * ho * wo];
        for s in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * stride + ki) as isize - pad as isize;
                                    let ix = (ox * stride + kj) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd
                                    {
                                        acc += x
                                            [((s * cin + ci) * h + iy as usize) * wd + ix as usize]
                                            * w[((co * cin + ci) * kh + ki) * kw + kj];
                                    }
                                }
                            }
                        }
                        out[((s * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn identity_kernel_sums_channels() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 3, 3], |i| i as f64);
        let w = Tensor::<f64>::full(&[1, 2, 1, 1], 1.0);
        let y = conv2d(&x, &w, Some(&Tensor::zeros(&[1])), 1, 0).unwrap();
        for i in 0..9 {
            assert_eq!(y.data()[i], x.data()[i] + x.data()[9 + i]);
        }
    }

    #[test]
    fn constant_field_all_ones_kernel() {
        let x = Tensor::<f64>::full(&[1, 1, 6, 6], 0.5);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (3, 2)] {
            let x = rand_vec(&mut rng, 3 * 8 * 8);
            let w = rand_vec(&mut rng, 4 * 3 * 3 * 3);
            let b = rand_vec(&mut rng, 4);
            let want = naive_conv(&x, [1, 3, 8, 8], &w, [4, 3, 3, 3], &b, stride, pad);
            let got = conv2d(
                &Tensor::from_f64(&[1, 3, 8, 8], &x).unwrap(),
                &Tensor::from_f64(&[4, 3, 3, 3], &w).unwrap(),
                Some(&Tensor::from_f64(&[4], &b).unwrap()),
                stride,
                pad,
            )
            .unwrap();
            for (g, e) in got.data().iter().zip(&want) {
                assert!((g - e).abs() <= 1e-6 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, None, 1, 0),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn output_shape_formula() {
        for h in 1..9usize {
            for k in 1..5usize {
                for stride in 1..4usize {
                    for pad in 0..3usize {
                        let x = Tensor::<f32>::zeros(&[1, 1, h, h]);
                        let w = Tensor::<f32>::zeros(&[1, 1, k, k]);
                        let r = conv2d(&x, &w, None, stride, pad);
                        if h + 2 * pad < k {
                            assert!(r.is_err());
                        } else {
                            let ho = (h + 2 * pad - k) / stride + 1;
                            assert_eq!(r.unwrap().shape(), &[1, 1, ho, ho]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stride, pad, k) in [(1, 0, 1), (1, 1, 3), (2, 1, 3), (2, 0, 2)] {
            let x = Tensor::<f64>::from_f64(&[2, 2, 5, 5], &rand_vec(&mut rng, 100)).unwrap();
            let w = Tensor::from_f64(&[3, 2, k, k], &rand_vec(&mut rng, 6 * k * k)).unwrap();
            let b = Tensor::from_f64(&[3], &rand_vec(&mut rng, 3)).unwrap();
            let err = finite_diff_check_many(
                |t| {
                    conv2d(&t[0], &t[1], Some(&t[2]), stride, pad)?
                        .square()?
                        .sum()
                },
                &[x, w, b],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "stride {stride} pad {pad} k {k}: {err}");
        }
    }
}
