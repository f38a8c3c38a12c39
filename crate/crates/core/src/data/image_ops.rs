use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

fn dims(img: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(config(format!(
            "expected a [C, H, W] image, got {:?}",
            img.shape()
        ))),
    }
}

/// Averages non-overlapping `fy × fx` boxes; trailing rows/columns that do
/// not fill a box are dropped.
fn box_reduce(
    data: &[f32],
    (c, h, w): (usize, usize, usize),
    fy: usize,
    fx: usize,
) -> (Vec<f32>, usize, usize) {
    let (ho, wo) = (h / fy, w / fx);
    let inv = 1.0 / (fy * fx) as f32;
    let mut out = vec![0.0f32; c * ho * wo];
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f32;
                for y in oy * fy..(oy + 1) * fy {
                    acc += plane[y * w + ox * fx..y * w + (ox + 1) * fx]
                        .iter()
                        .sum::<f32>();
                }
                out[(ch * ho + oy) * wo + ox] = acc * inv;
            }
        }
    }
    (out, ho, wo)
}

/// Source coordinate and weights for pixel-centre bilinear sampling.
fn taps(src: usize, n_dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / n_dst as f64;
    (0..n_dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize to `size × size` using pixel-centre alignment. Large
/// reductions are first box-averaged by an integer factor so that the
/// bilinear step never shrinks by more than 2×.
pub fn resize(img: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    if size == 0 {
        return Err(config("resize target must be positive"));
    }
    let (c, h, w) = dims(img)?;
    let (fy, fx) = ((h / size).max(1), (w / size).max(1));
    let (src, h, w) = if fy > 1 || fx > 1 {
        box_reduce(img.data(), (c, h, w), fy, fx)
    } else {
        (img.data().to_vec(), h, w)
    };
    if h == size && w == size {
        return Tensor::new(&[c, size, size], src);
    }
    let ys = taps(h, size);
    let xs = taps(w, size);
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                out.push(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    Tensor::new(&[c, size, size], out)
}

/// Per-channel mean and standard deviation used to standardize images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

const MIN_STD: f64 = 1e-6;

impl NormStats {
    /// Pooled statistics over every pixel of every image.
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = [0usize; 3];
        for img in images {
            let (c, h, w) = dims(img)?;
            if c != 3 {
                return Err(config(format!("expected 3 channels, got {c}")));
            }
            for (ch, plane) in img.data().chunks(h * w).enumerate() {
                for &v in plane {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
                count[ch] += plane.len();
            }
        }
        if count[0] == 0 {
            return Err(crate::error::data(
                "cannot fit normalization statistics on no images",
            ));
        }
        let mut s = Self::default();
        for ch in 0..3 {
            let n = count[ch] as f64;
            s.mean[ch] = sum[ch] / n;
            s.std[ch] = (sq[ch] / n - s.mean[ch] * s.mean[ch])
                .max(0.0)
                .sqrt()
                .max(MIN_STD);
        }
        Ok(s)
    }

    /// `(x − mean) / std` per channel.
    pub fn apply(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (c, h, w) = dims(img)?;
        if c != 3 {
            return Err(config(format!("expected 3 channels, got {c}")));
        }
        let out = img
            .data()
            .chunks(h * w)
            .enumerate()
            .flat_map(|(ch, plane)| {
                let (m, s) = (self.mean[ch], self.std[ch]);
                plane.iter().map(move |&v| ((v as f64 - m) / s) as f32)
            })
            .collect();
        Tensor::new(&[c, h, w], out)
    }
}

/// Resizes to `size × size` then standardizes with `stats`.
pub fn resize_normalize(img: &Tensor<f32>, size: usize, stats: &NormStats) -> Result<Tensor<f32>> {
    stats.apply(&resize(img, size)?)
}

pub fn hflip(img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(img)?;
    let mut out = img.data().to_vec();
    for row in out.chunks_mut(w) {
        row.reverse();
    }
    Tensor::new(&[c, h, w], out)
}

/// Normalized 1-D Gaussian taps for radius `⌈4σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (4.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &Tensor<f32>, sigma: f64) -> Result<Tensor<f32>> {
    if sigma <= 0.0 {
        return Err(config("blur sigma must be positive"));
    }
    let (c, h, w) = dims(img)?;
    let k = gaussian_kernel(sigma);
    let r = k.len() / 2;
    let mut out = vec![0.0f32; c * h * w];
    let mut padded = vec![0.0f32; w + 2 * r];
    let mut tmp = vec![0.0f32; h * w];
    for (src, dst) in img.data().chunks(h * w).zip(out.chunks_mut(h * w)) {
        // taps run outermost so the inner loops vectorize; each output still
        // accumulates its taps in order from zero
        tmp.fill(0.0);
        for (row, acc) in src.chunks(w).zip(tmp.chunks_mut(w)) {
            padded[..r].fill(row[0]);
            padded[r..r + w].copy_from_slice(row);
            padded[r + w..].fill(row[w - 1]);
            for (t, &kv) in k.iter().enumerate() {
                for (a, &v) in acc.iter_mut().zip(&padded[t..t + w]) {
                    *a += kv * v;
                }
            }
        }
        for (y, acc) in dst.chunks_mut(w).enumerate() {
            for (t, &kv) in k.iter().enumerate() {
                let sy = (y + t).saturating_sub(r).min(h - 1);
                for (a, &v) in acc.iter_mut().zip(&tmp[sy * w..(sy + 1) * w]) {
                    *a += kv * v;
                }
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Rotates counter-clockwise (as displayed, rows running downward) about
/// the image centre with bilinear sampling and edge replication.
pub fn rotate(img: &Tensor<f32>, degrees: f64) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(img)?;
    if degrees == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(c * h * w);
    let mut coords = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = (cx + dx * cos - dy * sin).clamp(0.0, (w - 1) as f64);
            let sy = (cy + dx * sin + dy * cos).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            coords.push((
                x0,
                x1,
                y0,
                y1,
                (sx - x0 as f64) as f32,
                (sy - y0 as f64) as f32,
            ));
        }
    }
    for plane in img.data().chunks(h * w) {
        for &(x0, x1, y0, y1, fx, fy) in &coords {
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Tensor::new(&[c, h, w], out)
}

pub const FLIP_PROB: f64 = 0.5;
pub const BLUR_PROB: f64 = 0.5;
pub const BLUR_SIGMA: (f64, f64) = (0.1, 2.0);
pub const MAX_ROTATION_DEG: f64 = 5.0;

/// One draw of the training augmentations.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    pub flip: bool,
    pub blur_sigma: Option<f64>,
    pub rotation_deg: f64,
}

impl AugmentPlan {
    pub fn identity() -> Self {
        Self {
            flip: false,
            blur_sigma: None,
            rotation_deg: 0.0,
        }
    }

    pub fn sample(rng: &mut Prng) -> Self {
        let flip = rng.gen_bool(FLIP_PROB);
        let blur = rng.gen_bool(BLUR_PROB);
        let sigma = rng.gen_range(BLUR_SIGMA.0..=BLUR_SIGMA.1);
        let rotation_deg = rng.gen_range(0.0..=MAX_ROTATION_DEG);
        Self {
            flip,
            blur_sigma: blur.then_some(sigma),
            rotation_deg,
        }
    }

    /// Flip, then blur, then rotate.
    pub fn apply(&self, img: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut out = if self.flip { hflip(img)? } else { img.clone() };
        if let Some(s) = self.blur_sigma {
            out = gaussian_blur(&out, s)?;
        }
        rotate(&out, self.rotation_deg)
    }
}

/// Horizontal flip (p = 0.5), Gaussian blur (p = 0.5, σ ~ U[0.1, 2]) and
/// a rotation drawn from U[0°, 5°].
pub fn augment(img: &Tensor<f32>, rng: &mut Prng) -> Result<Tensor<f32>> {
    AugmentPlan::sample(rng).apply(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn random_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = rng_for(seed, &[]);
        Tensor::from_fn(&[c, h, w], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn flip_is_an_involution() {
        let img = random_image(3, 5, 7, 1);
        let twice = hflip(&hflip(&img).unwrap()).unwrap();
        assert_eq!(twice.data(), img.data());
        let plan = AugmentPlan {
            flip: true,
            ..AugmentPlan::identity()
        };
        assert_eq!(
            plan.apply(&plan.apply(&img).unwrap()).unwrap().data(),
            img.data()
        );
        assert_ne!(hflip(&img).unwrap().data(), img.data());
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = random_image(3, 9, 11, 2);
        let r = rotate(&img, 0.0).unwrap();
        assert_eq!(r.data(), img.data());
        // exercise the sampling path at an angle that is numerically zero
        let r = rotate(&img, 1e-12).unwrap();
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_turns_counter_clockwise() {
        // bright pixel right of centre moves upward
        let mut v = vec![0.0f32; 21 * 21];
        v[10 * 21 + 18] = 1.0;
        let img = Tensor::new(&[1, 21, 21], v).unwrap();
        let r = rotate(&img, 90.0).unwrap();
        let (idx, _) = r
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!((idx / 21, idx % 21), (2, 10));
    }

    #[test]
    fn blur_preserves_interior_mass() {
        for seed in 0..5 {
            let img = random_image(3, 64, 64, seed);
            let b = gaussian_blur(&img, 2.0).unwrap();
            // crop beyond the kernel radius
            let crop = |t: &Tensor<f32>| -> f64 {
                let mut s = 0.0;
                for ch in 0..3 {
                    for y in 12..52 {
                        for x in 12..52 {
                            s += t.data()[(ch * 64 + y) * 64 + x] as f64;
                        }
                    }
                }
                s
            };
            let (a, m) = (crop(&img), crop(&b));
            assert!((a - m).abs() / a < 0.01, "{a} vs {m}");
            let total = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).sum::<f64>();
            assert!((total(&img) - total(&b)).abs() / total(&img) < 0.01);
        }
    }

    #[test]
    fn gaussian_kernel_shape() {
        let k = gaussian_kernel(0.5);
        assert_eq!(k.len(), 5);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(gaussian_kernel(2.0).len(), 17);
    }

    #[test]
    fn augment_keeps_shape_and_range() {
        let img = random_image(3, 30, 30, 4);
        for s in 0..20 {
            let out = augment(&img, &mut rng_for(s, &[])).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert!(out
                .data()
                .iter()
                .all(|&v| (-1e-6..=1.0 + 1e-6).contains(&v)));
        }
    }

    #[test]
    fn augment_draw_frequencies() {
        let mut rng = rng_for(9, &[]);
        let plans: Vec<_> = (0..4000).map(|_| AugmentPlan::sample(&mut rng)).collect();
        let flips = plans.iter().filter(|p| p.flip).count() as f64 / 4000.0;
        let blurs = plans.iter().filter(|p| p.blur_sigma.is_some()).count() as f64 / 4000.0;
        assert!((flips - 0.5).abs() < 0.03);
        assert!((blurs - 0.5).abs() < 0.03);
        assert!(plans.iter().all(|p| (0.0..=5.0).contains(&p.rotation_deg)));
        assert!(plans
            .iter()
            .filter_map(|p| p.blur_sigma)
            .all(|s| (0.1..=2.0).contains(&s)));
    }

    #[test]
    fn constant_image_resize_and_normalize() {
        let img = Tensor::<f32>::full(&[3, 200, 200], 0.7);
        let stats = NormStats {
            mean: [0.5, 0.4, 0.3],
            std: [0.2, 0.1, 0.5],
        };
        let out = resize_normalize(&img, 200, &stats).unwrap();
        for ch in 0..3 {
            let want = ((0.7f32 as f64 - stats.mean[ch]) / stats.std[ch]) as f32;
            assert!(out.data()[ch * 40000..(ch + 1) * 40000]
                .iter()
                .all(|&v| (v - want).abs() < 1e-6));
        }
        let up = resize(&Tensor::<f32>::full(&[3, 100, 100], 0.25), 200).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.25));
    }

    /// Exact area-weighted resampling.
    fn area_resample(plane: &[f32], n: usize, m: usize) -> Vec<f64> {
        let scale = n as f64 / m as f64;
        let mut out = vec![0.0; m * m];
        let overlap = |o: usize, i: usize| -> f64 {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            ((i + 1) as f64).min(b) - (i as f64).max(a)
        };
        for oy in 0..m {
            for ox in 0..m {
                let mut acc = 0.0;
                for y in
                    (oy as f64 * scale) as usize..(((oy + 1) as f64 * scale).ceil() as usize).min(n)
                {
                    for x in (ox as f64 * scale) as usize
                        ..(((ox + 1) as f64 * scale).ceil() as usize).min(n)
                    {
                        let wgt = overlap(oy, y).max(0.0) * overlap(ox, x).max(0.0);
                        acc += wgt * plane[y * n + x] as f64;
                    }
                }
                out[oy * m + ox] = acc / (scale * scale);
            }
        }
        out
    }

    fn checkerboard(n: usize, cell: usize) -> Tensor<f32> {
        Tensor::from_fn(&[3, n, n], |i| {
            let (y, x) = ((i / n) % n, i % n);
            ((y / cell + x / cell) % 2) as f32
        })
    }

    #[test]
    fn checkerboard_downscale_matches_area_oracle() {
        for (n, cell, m) in [(400, 1, 200), (400, 4, 200), (480, 8, 240), (600, 1, 200)] {
            let img = checkerboard(n, cell);
            let got = resize(&img, m).unwrap();
            let want = area_resample(&img.data()[..n * n], n, m);
            for (g, w) in got.data()[..m * m].iter().zip(&want) {
                assert!(
                    (*g as f64 - w).abs() <= 0.02 * w.max(0.5),
                    "{n}/{cell}/{m}: {g} vs {w}"
                );
            }
        }
    }

    #[test]
    fn non_integer_downscale_keeps_mean() {
        let img = checkerboard(300, 5);
        let got = resize(&img, 211).unwrap();
        let mean = got.data().iter().map(|&v| v as f64).sum::<f64>() / got.numel() as f64;
        assert!((mean - 0.5).abs() < 0.01 * 0.5, "{mean}");
    }

    #[test]
    fn stats_fit_and_apply() {
        let imgs = [random_image(3, 10, 10, 1), random_image(3, 12, 12, 2)];
        let s = NormStats::fit(imgs.iter()).unwrap();
        let normed: Vec<_> = imgs.iter().map(|i| s.apply(i).unwrap()).collect();
        let again = NormStats::fit(normed.iter()).unwrap();
        for ch in 0..3 {
            assert!(again.mean[ch].abs() < 1e-5);
            assert!((again.std[ch] - 1.0).abs() < 1e-4);
        }
        let flat = NormStats::fit([&Tensor::<f32>::full(&[3, 4, 4], 0.5)]).unwrap();
        assert_eq!(flat.std, [MIN_STD; 3]);
    }
}
