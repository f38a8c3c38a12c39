use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::Model;
use crate::data::resize;
use crate::error::{config, usage, Result};
use crate::nn::Mode;
use crate::tensor::Tensor;

/// Class-activation map for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Row-major `height × width` values in `[0, 1]`.
    pub values: Vec<f32>,
    pub height: usize,
    pub width: usize,
    /// Spatial size of the feature map the activations came from.
    pub source_height: usize,
    pub source_width: usize,
    /// Unnormalized `ReLU(Σ α_k A^k)` at feature resolution.
    pub raw: Vec<f64>,
    pub target_class: usize,
}

impl Heatmap {
    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }
}

/// `ReLU(Σ_k α_k A^k)` with `α_k` the spatial mean of `grads[k]`.
/// Both inputs are `[C, H, W]` row-major.
pub fn weighted_activation_map(
    activations: &[f64],
    grads: &[f64],
    channels: usize,
) -> Result<Vec<f64>> {
    if channels == 0 || activations.len() != grads.len() || activations.len() % channels != 0 {
        return Err(usage(format!(
            "activation map: {} activations, {} gradients, {channels} channels",
            activations.len(),
            grads.len()
        )));
    }
    let plane = activations.len() / channels;
    let mut out = vec![0.0; plane];
    for k in 0..channels {
        let g = &grads[k * plane..(k + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        for (o, a) in out.iter_mut().zip(&activations[k * plane..(k + 1) * plane]) {
            *o += alpha * a;
        }
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

/// Divides by the maximum; an all-zero map is returned unchanged.
pub fn normalize_map(values: &mut [f32]) {
    let max = values.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        values
            .iter_mut()
            .for_each(|v| *v = (*v / max).clamp(0.0, 1.0));
    }
}

/// Grad-CAM on the output of the last block before global pooling, for
/// the raw logit of `target_class`. `image` is `[3, S, S]` or
/// `[1, 3, S, S]`, already preprocessed like the training inputs.
pub fn grad_cam(model: &Model<f32>, image: &Tensor<f32>, target_class: usize) -> Result<Heatmap> {
    let x = match image.rank() {
        3 => image.reshape(&[1, image.shape()[0], image.shape()[1], image.shape()[2]])?,
        4 if image.shape()[0] == 1 => image.clone(),
        _ => {
            return Err(usage(format!(
                "grad_cam expects one image, got shape {:?}",
                image.shape()
            )))
        }
    };
    let (in_h, in_w) = (x.shape()[2], x.shape()[3]);
    if in_h != in_w {
        return Err(config(format!(
            "grad_cam needs a square input, got {in_h}×{in_w}"
        )));
    }
    let features = model
        .features(&x.detach(), Mode::Eval)?
        .detach()
        .with_grad();
    let fs = features.shape().to_vec();
    if fs.len() != 4 {
        return Err(usage(format!(
            "feature map has shape {fs:?}, expected [1, C, H, W]"
        )));
    }
    let logits = model.head(&features, Mode::Eval)?;
    let out_nodes = logits.shape()[1];
    if target_class >= out_nodes {
        return Err(usage(format!(
            "target class {target_class} out of range for {out_nodes} outputs"
        )));
    }
    logits.pick(target_class)?.backward()?;
    model.zero_grad();
    let grads: Vec<f64> = features
        .grad()
        .unwrap_or_else(|| vec![0.0; features.numel()])
        .iter()
        .map(|&g| g as f64)
        .collect();
    let raw = weighted_activation_map(&features.to_f64_vec(), &grads, fs[1])?;
    let (h, w) = (fs[2], fs[3]);
    let coarse = Tensor::new(&[1, h, w], raw.iter().map(|&v| v as f32).collect())?;
    let mut values = resize(&coarse, in_h)?.data().to_vec();
    normalize_map(&mut values);
    Ok(Heatmap {
        values,
        height: in_h,
        width: in_w,
        source_height: h,
        source_width: w,
        raw,
        target_class,
    })
}

/// Piecewise-linear blue → cyan → yellow → red colour scale.
pub fn colormap(v: f32) -> [f32; 3] {
    const STOPS: [(f32, [f32; 3]); 4] = [
        (0.0, [0.0, 0.0, 1.0]),
        (1.0 / 3.0, [0.0, 1.0, 1.0]),
        (2.0 / 3.0, [1.0, 1.0, 0.0]),
        (1.0, [1.0, 0.0, 0.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    for pair in STOPS.windows(2) {
        let ((a, ca), (b, cb)) = (pair[0], pair[1]);
        if v <= b {
            let t = (v - a) / (b - a);
            return [0, 1, 2].map(|i| ca[i] + (cb[i] - ca[i]) * t);
        }
    }
    STOPS[3].1
}

pub const OVERLAY_ALPHA: f32 = 0.5;

/// `(1 − αh)·image + αh·colormap(h)` per pixel, quantized to 8 bits.
/// `image` is `[3, H, W]` in `[0, 1]` at the heatmap's resolution.
pub fn blend(heatmap: &Heatmap, image: &Tensor<f32>) -> Result<image::RgbImage> {
    let s = image.shape();
    if s != [3, heatmap.height, heatmap.width] {
        return Err(usage(format!(
            "image {s:?} does not match a {}×{} heatmap",
            heatmap.height, heatmap.width
        )));
    }
    let (h, w) = (heatmap.height, heatmap.width);
    let d = image.data();
    Ok(image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let hv = heatmap.values[i];
        let c = colormap(hv);
        let a = OVERLAY_ALPHA * hv;
        image::Rgb([0, 1, 2].map(|ch| {
            let v = (1.0 - a) * d[ch * h * w + i] + a * c[ch];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    }))
}

/// Writes the blended overlay as a PNG and returns the pixels written.
pub fn overlay(heatmap: &Heatmap, image: &Tensor<f32>, out: &Path) -> Result<image::RgbImage> {
    let img = blend(heatmap, image)?;
    img.save_with_format(out, image::ImageFormat::Png)?;
    Ok(img)
}

/// `<source_id>_<true>_<pred>.png` with path separators and other
/// unsafe characters replaced by `_`.
pub fn overlay_filename(source_id: &str, true_label: &str, predicted: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    let stem = source_id.rsplit_once('.').map_or(source_id, |(a, _)| a);
    format!(
        "{}_{}_{}.png",
        clean(stem),
        clean(true_label),
        clean(predicted)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, ModelConfig};

    #[test]
    fn single_channel_unit_gradient() {
        let a = [0.5, -1.0, 2.0, 0.0];
        let raw = weighted_activation_map(&a, &[1.0; 4], 1).unwrap();
        assert_eq!(raw, [0.5, 0.0, 2.0, 0.0]);
        let mut v: Vec<f32> = raw.iter().map(|&x| x as f32).collect();
        normalize_map(&mut v);
        assert_eq!(v, [0.25, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn negative_activations_give_zero_map() {
        let raw =
            weighted_activation_map(&[-1.0, -0.5, -2.0, -0.1], &[0.3, 0.1, 0.2, 0.4], 1).unwrap();
        let mut v: Vec<f32> = raw.iter().map(|&x| x as f32).collect();
        normalize_map(&mut v);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_channel_weighted_sum() {
        let a0 = [1.0, 2.0, 3.0, 4.0];
        let a1 = [0.5, -3.0, 1.0, 0.25];
        let g0 = [0.2, 0.4, 0.6, 0.8];
        let g1 = [-0.1, -0.1, -0.1, -0.1];
        let acts: Vec<f64> = a0.iter().chain(&a1).copied().collect();
        let grads: Vec<f64> = g0.iter().chain(&g1).copied().collect();
        let raw = weighted_activation_map(&acts, &grads, 2).unwrap();
        for i in 0..4 {
            let expect = (0.5 * a0[i] - 0.1 * a1[i]).max(0.0);
            assert!((raw[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn model_heatmap_range_and_errors() {
        let cfg = ModelConfig::minimal(4);
        let m = build_model::<f32>(&cfg, 3).unwrap();
        let img = Tensor::from_fn(&[3, 200, 200], |i| ((i * 31) % 17) as f32 / 17.0 - 0.5);
        let h = grad_cam(&m, &img, 2).unwrap();
        assert_eq!((h.height, h.width, h.values.len()), (200, 200, 200 * 200));
        assert_eq!((h.source_height, h.source_width), (100, 100));
        assert!(h.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(h.max() == 0.0 || h.max() == 1.0);
        assert!(matches!(
            grad_cam(&m, &img, cfg.out_nodes),
            Err(crate::Error::Usage(_))
        ));
        assert!(m.params().iter().all(|p| p.grad().is_none()));
    }

    fn flat_map(value: f32) -> Heatmap {
        Heatmap {
            values: vec![value; 12],
            height: 3,
            width: 4,
            source_height: 3,
            source_width: 4,
            raw: vec![value as f64; 12],
            target_class: 0,
        }
    }

    #[test]
    fn blend_extremes() {
        let img = Tensor::from_fn(&[3, 3, 4], |i| i as f32 / 36.0);
        let zero = blend(&flat_map(0.0), &img).unwrap();
        for (i, px) in zero.pixels().enumerate() {
            for ch in 0..3 {
                assert_eq!(px[ch], (img.data()[ch * 12 + i] * 255.0).round() as u8);
            }
        }
        let full = blend(&flat_map(1.0), &img).unwrap();
        for (i, px) in full.pixels().enumerate() {
            let c = colormap(1.0);
            for ch in 0..3 {
                let v = 0.5 * img.data()[ch * 12 + i] + 0.5 * c[ch];
                assert_eq!(px[ch], (v * 255.0).round() as u8);
            }
        }
        assert!(blend(&flat_map(0.0), &Tensor::zeros(&[3, 4, 4])).is_err());
    }

    #[test]
    fn written_png_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = flat_map(0.0);
        h.values = (0..12).map(|i| i as f32 / 11.0).collect();
        let img = Tensor::from_fn(&[3, 3, 4], |i| ((i * 7) % 36) as f32 / 35.0);
        let p = dir
            .path()
            .join(overlay_filename("ring/ring_0001.png", "ring", "blob"));
        let written = overlay(&h, &img, &p).unwrap();
        assert!(p.ends_with("ring_ring_0001_ring_blob.png"));
        assert_eq!(image::open(&p).unwrap().to_rgb8(), written);
        assert!(overlay(&h, &img, Path::new("/no/such/dir/x.png")).is_err());
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
    }
}
