//! Dataset ingestion, stratified folds, augmentation, resizing and
//! normalization, the synthetic texture dataset and a prefetching loader.

mod folds;
mod image_ops;
mod loader;
mod synth;

pub use folds::{kfold_split, FoldPlan};
pub use image_ops::{
    augment, gaussian_blur, gaussian_kernel, hflip, resize, resize_normalize, rotate, AugmentPlan,
    NormStats, BLUR_PROB, BLUR_SIGMA, FLIP_PROB, MAX_ROTATION_DEG,
};
pub use loader::{augment_rng, Batch, DataLoader, EpochBatches};
pub use synth::{render_sample, synthesize_dataset, SYNTH_CLASSES, SYNTH_SIZE};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{data, Result};
use crate::tensor::Tensor;
use crate::Error;

/// One decoded image with its label.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `[3, H, W]` with values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    pub source_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the dataset root, `<class>/<file>`.
    pub source_id: String,
    pub label: usize,
}

/// A file that was found but could not be decoded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub samples: Vec<ManifestEntry>,
    /// Seed the dataset was generated with, if synthetic.
    pub seed: Option<u64>,
    /// Dataset-wide per-channel statistics of the decoded images.
    pub norm: NormStats,
    #[serde(default)]
    pub rejects: Vec<Reject>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.source_id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::PathNotFound(path.to_path_buf()));
        }
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.samples {
            if s.label >= self.num_classes() {
                return Err(data(format!(
                    "{}: label {} out of range",
                    s.source_id, s.label
                )));
            }
            if !seen.insert(&s.source_id) {
                return Err(data(format!("duplicate source id {}", s.source_id)));
            }
        }
        Ok(())
    }

    /// Decodes every listed image.
    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.samples
            .iter()
            .map(|e| {
                Ok(Sample {
                    image: decode_image(&self.path_of(e))?,
                    label: e.label,
                    source_id: e.source_id.clone(),
                })
            })
            .collect()
    }
}

/// Reads an image file as a `[3, H, W]` tensor in `[0, 1]`.
pub fn decode_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)?.to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut planar = vec![0.0f32; raw.len()];
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for ch in 0..3 {
            planar[ch * h * w + i] = px[ch].clamp(0.0, 1.0);
        }
    }
    Tensor::new(&[3, h, w], planar)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.retain(|p| {
        !p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'))
    });
    v.sort();
    Ok(v)
}

/// Walks `root/<class>/<image>`; classes are sorted lexicographically
/// into label indices. Files that fail to decode are listed in
/// `rejects`. A class with no decodable image is a data error.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::PathNotFound(root.to_path_buf()));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.is_empty() {
        return Err(data(format!(
            "{} contains no class directories",
            root.display()
        )));
    }
    let mut class_names = Vec::new();
    let mut samples = Vec::new();
    let mut rejects = Vec::new();
    let mut images = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let class = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| {
                data(format!(
                    "class directory {} is not valid UTF-8",
                    dir.display()
                ))
            })?
            .to_string();
        let before = samples.len();
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            match decode_image(&file) {
                Ok(img) => {
                    let name = file
                        .file_name()
                        .and_then(|n| n.to_str())
                        .unwrap_or_default();
                    samples.push(ManifestEntry {
                        source_id: format!("{class}/{name}"),
                        label,
                    });
                    images.push(img);
                }
                Err(e) => rejects.push(Reject {
                    path: file.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        if samples.len() == before {
            return Err(data(format!(
                "class directory {} has no decodable images",
                dir.display()
            )));
        }
        class_names.push(class);
    }
    let norm = NormStats::fit(images.iter())?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        class_names,
        samples,
        seed: None,
        norm,
        rejects,
    })
}
