use std::path::Path;

use rand::Rng;

use crate::error::Result;
use crate::rng::{rng_for, stream, Prng};
use crate::tensor::Tensor;

use super::{load_dataset, DatasetManifest};

/// Class names of the synthetic set, already in label order.
pub const SYNTH_CLASSES: [&str; 4] = ["blob", "ring", "speckle", "stripe"];
pub const SYNTH_SIZE: usize = 96;

/// Mild per-class colour cast, jittered per image.
const TINT: [[f32; 3]; 4] = [
    [1.0, 0.9, 0.82],
    [0.88, 1.0, 0.9],
    [0.86, 0.9, 1.0],
    [1.0, 0.97, 0.84],
];

fn gaussian(d2: f32, sigma: f32) -> f32 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Pattern intensity in `[0, 1]` for one class.
fn pattern(class: usize, rng: &mut Prng, n: usize) -> Vec<f32> {
    let mut f = vec![0.0f32; n * n];
    let nf = n as f32;
    match class {
        0 => {
            for _ in 0..rng.gen_range(1..=3) {
                let (cx, cy) = (rng.gen_range(0.2..0.8) * nf, rng.gen_range(0.2..0.8) * nf);
                let s = rng.gen_range(8.0..16.0);
                for y in 0..n {
                    for x in 0..n {
                        let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                        let v = &mut f[y * n + x];
                        *v = v.max(gaussian(d2, s));
                    }
                }
            }
        }
        1 => {
            for _ in 0..rng.gen_range(1..=2) {
                let (cx, cy) = (rng.gen_range(0.3..0.7) * nf, rng.gen_range(0.3..0.7) * nf);
                let r = rng.gen_range(14.0..30.0);
                let t = rng.gen_range(2.0..3.5);
                for y in 0..n {
                    for x in 0..n {
                        let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                        let v = &mut f[y * n + x];
                        *v = v.max(gaussian((d - r).powi(2), t));
                    }
                }
            }
        }
        2 => {
            for _ in 0..rng.gen_range(150..=250) {
                let (cx, cy) = (rng.gen_range(0.0..nf), rng.gen_range(0.0..nf));
                let s = rng.gen_range(0.7..1.2);
                let (x0, y0) = (
                    (cx as isize - 3).max(0) as usize,
                    (cy as isize - 3).max(0) as usize,
                );
                for y in y0..(cy as usize + 4).min(n) {
                    for x in x0..(cx as usize + 4).min(n) {
                        let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                        let v = &mut f[y * n + x];
                        *v = v.max(gaussian(d2, s));
                    }
                }
            }
        }
        _ => {
            let theta: f32 = rng.gen_range(0.0..std::f32::consts::PI);
            let period = rng.gen_range(8.0..14.0);
            let phase = rng.gen_range(0.0..std::f32::consts::TAU);
            let (s, c) = theta.sin_cos();
            for y in 0..n {
                for x in 0..n {
                    let u = x as f32 * c + y as f32 * s;
                    f[y * n + x] = 0.5 + 0.5 * (std::f32::consts::TAU * u / period + phase).sin();
                }
            }
        }
    }
    f
}

/// Draws sample `index` of `class` as a `[3, SYNTH_SIZE, SYNTH_SIZE]`
/// image in `[0, 1]`. Background level, contrast, tint and noise vary
/// per image.
pub fn render_sample(class: usize, index: usize, seed: u64) -> Tensor<f32> {
    let n = SYNTH_SIZE;
    let mut rng = rng_for(seed, &[stream::SYNTH, class as u64, index as u64]);
    let background = rng.gen_range(0.1..0.35f32);
    let contrast = rng.gen_range(0.45..0.65f32);
    let tint: Vec<f32> = TINT[class % 4]
        .iter()
        .map(|t| t + rng.gen_range(-0.04..0.04f32))
        .collect();
    let f = pattern(class % 4, &mut rng, n);
    let mut out = vec![0.0f32; 3 * n * n];
    for ch in 0..3 {
        for (i, &v) in f.iter().enumerate() {
            let noise: f32 = rng.gen_range(-0.05..0.05);
            out[ch * n * n + i] = ((background + contrast * v) * tint[ch] + noise).clamp(0.0, 1.0);
        }
    }
    Tensor::new(&[3, n, n], out).expect("sized buffer")
}

fn to_png(img: &Tensor<f32>) -> image::RgbImage {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |ch: usize| (d[ch * h * w + i] * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// Writes `n_per_class` PNGs for each of the four texture classes under
/// `out/<class>/` plus `out/manifest.json`, and returns the manifest.
/// Output bytes depend only on `seed`.
pub fn synthesize_dataset(n_per_class: usize, seed: u64, out: &Path) -> Result<DatasetManifest> {
    if n_per_class == 0 {
        return Err(crate::error::config("n_per_class must be at least 1"));
    }
    for (class, name) in SYNTH_CLASSES.iter().enumerate() {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir)?;
        for i in 0..n_per_class {
            to_png(&render_sample(class, i, seed)).save(dir.join(format!("{name}_{i:04}.png")))?;
        }
    }
    let mut manifest = load_dataset(out)?;
    manifest.seed = Some(seed);
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        let ma = synthesize_dataset(3, 42, a.path()).unwrap();
        synthesize_dataset(3, 42, b.path()).unwrap();
        let mc = synthesize_dataset(3, 7, c.path()).unwrap();
        assert_eq!(ma.len(), 12);
        assert_eq!(ma.class_names, SYNTH_CLASSES);
        assert_eq!(ma.class_counts(), mc.class_counts());
        for e in &ma.samples {
            let bytes = |root: &Path| std::fs::read(root.join(&e.source_id)).unwrap();
            assert_eq!(bytes(a.path()), bytes(b.path()), "{}", e.source_id);
            assert_ne!(bytes(a.path()), bytes(c.path()), "{}", e.source_id);
        }
    }

    #[test]
    fn rendered_values_in_unit_range() {
        for class in 0..4 {
            let img = render_sample(class, 0, 1);
            assert_eq!(img.shape(), &[3, SYNTH_SIZE, SYNTH_SIZE]);
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
