use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{rng_for, stream};
use crate::Error;

use super::{DatasetManifest, NormStats};

/// Assignment of every sample to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `source_id → fold`
    pub assignment: BTreeMap<String, usize>,
    /// Statistics of each fold's training portion, once fitted.
    #[serde(default)]
    pub norm_stats: Vec<NormStats>,
}

/// Stratified split: each class is shuffled with its own seeded stream,
/// then samples are dealt round-robin with one counter running across
/// all classes, so fold sizes differ by at most one overall and within
/// each class.
pub fn kfold_split(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(config(format!("k = {k}, need at least 2 folds")));
    }
    let counts = manifest.class_counts();
    for (class, &count) in counts.iter().enumerate() {
        if count < k {
            return Err(Error::Stratification {
                class: manifest.class_names[class].clone(),
                count,
                k,
            });
        }
    }
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    for class in 0..manifest.num_classes() {
        let mut ids: Vec<&str> = manifest
            .samples
            .iter()
            .filter(|s| s.label == class)
            .map(|s| s.source_id.as_str())
            .collect();
        ids.shuffle(&mut rng_for(seed, &[stream::FOLDS, class as u64]));
        for id in ids {
            assignment.insert(id.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
        norm_stats: Vec::new(),
    })
}

impl FoldPlan {
    pub fn fold_of(&self, source_id: &str) -> Option<usize> {
        self.assignment.get(source_id).copied()
    }

    /// Indices into `manifest.samples` of the (train, validation) split
    /// for `fold`.
    pub fn split(
        &self,
        manifest: &DatasetManifest,
        fold: usize,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.k {
            return Err(config(format!(
                "fold {fold} out of range for k = {}",
                self.k
            )));
        }
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, s) in manifest.samples.iter().enumerate() {
            match self.fold_of(&s.source_id) {
                Some(f) if f == fold => val.push(i),
                Some(_) => train.push(i),
                None => {
                    return Err(crate::error::data(format!(
                        "{} is not in the fold plan",
                        s.source_id
                    )))
                }
            }
        }
        Ok((train, val))
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ManifestEntry;
    use std::collections::HashSet;

    pub(crate) fn manifest(counts: &[usize]) -> DatasetManifest {
        let mut samples = Vec::new();
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                samples.push(ManifestEntry {
                    source_id: format!("c{label}/{i}.png"),
                    label,
                });
            }
        }
        DatasetManifest {
            root: "/nowhere".into(),
            class_names: (0..counts.len()).map(|c| format!("c{c}")).collect(),
            samples,
            seed: None,
            norm: NormStats::default(),
            rejects: Vec::new(),
        }
    }

    #[test]
    fn paper_scale_ten_folds() {
        let m = manifest(&[60, 60, 60, 60]);
        let plan = kfold_split(&m, 10, 42).unwrap();
        assert_eq!(plan.fold_sizes(), vec![24; 10]);
        for fold in 0..10 {
            let (_, val) = plan.split(&m, fold).unwrap();
            let mut per_class = [0; 4];
            for i in val {
                per_class[m.samples[i].label] += 1;
            }
            assert_eq!(per_class, [6; 4]);
        }
    }

    #[test]
    fn one_sample_per_fold() {
        let m = manifest(&[10]);
        let plan = kfold_split(&m, 10, 0).unwrap();
        assert_eq!(plan.fold_sizes(), vec![1; 10]);
        let mut all = HashSet::new();
        for fold in 0..10 {
            let (train, val) = plan.split(&m, fold).unwrap();
            assert_eq!(val.len(), 1);
            assert_eq!(train.len(), 9);
            assert!(all.insert(val[0]));
        }
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let m = manifest(&[13, 17, 11]);
        let a = kfold_split(&m, 5, 1).unwrap();
        let b = kfold_split(&m, 5, 1).unwrap();
        let c = kfold_split(&m, 5, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.assignment, c.assignment);
        assert_eq!(a.fold_sizes(), c.fold_sizes());
    }

    #[test]
    fn small_class_is_stratification_error() {
        let m = manifest(&[10, 3]);
        match kfold_split(&m, 5, 0) {
            Err(Error::Stratification { class, count, k }) => {
                assert_eq!((class.as_str(), count, k), ("c1", 3, 5));
            }
            other => panic!("{other:?}"),
        }
        assert!(kfold_split(&m, 1, 0).is_err());
    }
}
