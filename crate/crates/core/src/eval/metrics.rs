use serde::{Deserialize, Serialize};

use crate::error::{data, usage, Result};
use crate::tensor::{Element, Tensor};

/// Argmax over the first `num_classes` columns of each row; extra output
/// nodes are ignored and ties go to the lower index.
pub fn predict_class<T: Element>(logits: &Tensor<T>, num_classes: usize) -> Result<Vec<usize>> {
    let s = logits.shape();
    if s.len() != 2 || num_classes == 0 || s[1] < num_classes {
        return Err(usage(format!(
            "predict_class: logits {s:?} cannot cover {num_classes} classes"
        )));
    }
    Ok(logits
        .data()
        .chunks(s[1].max(1))
        .take(s[0])
        .map(|row| {
            let mut best = 0;
            for c in 1..num_classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Counts with rows indexed by true class and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|r| r.len() != c) {
            return Err(data("confusion matrix must be square"));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.classes();
        if truth >= c || predicted >= c {
            return Err(data(format!(
                "class pair ({truth}, {predicted}) outside {c} classes"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn add_all(&mut self, truth: &[usize], predicted: &[usize]) -> Result<()> {
        if truth.len() != predicted.len() {
            return Err(usage("truth and prediction lengths differ"));
        }
        truth
            .iter()
            .zip(predicted)
            .try_for_each(|(&t, &p)| self.add(t, p))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn metrics(&self) -> MetricsReport {
        let c = self.classes();
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let mut precision = Vec::with_capacity(c);
        let mut recall = Vec::with_capacity(c);
        let mut f1 = Vec::with_capacity(c);
        for k in 0..c {
            let tp = self.counts[k][k];
            let predicted: u64 = (0..c).map(|r| self.counts[r][k]).sum();
            let actual: u64 = self.counts[k].iter().sum();
            let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
            precision.push(p);
            recall.push(r);
            f1.push(if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            });
        }
        let macro_f1 = if c == 0 {
            0.0
        } else {
            f1.iter().sum::<f64>() / c as f64
        };
        MetricsReport {
            precision,
            recall,
            f1,
            macro_f1,
            accuracy: ratio(self.trace(), self.total()),
            n: self.total(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub n: u64,
}

/// Five-number style summary of a metric across folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(usage("cannot summarize an empty set of values"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
    Ok(Summary {
        median: quantile(&v, 0.5),
        q1,
        q3,
        iqr: q3 - q1,
        min: v[0],
        max: v[v.len() - 1],
        n: v.len(),
    })
}
