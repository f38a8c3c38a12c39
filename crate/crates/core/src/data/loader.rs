use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;

use crate::error::{config, Result};
use crate::rng::{rng_for, stream, Prng};
use crate::tensor::Tensor;

use super::AugmentPlan;

/// Random stream for the augmentation of one sample in one epoch. It
/// depends on neither the worker nor the batch the sample lands in.
pub fn augment_rng(seed: u64, epoch: u64, sample: usize) -> Prng {
    rng_for(seed, &[stream::AUGMENT, epoch, sample as u64])
}

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 3, S, S]`
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Positions of the samples in the loader's image list.
    pub indices: Vec<usize>,
}

struct Source {
    images: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    seed: u64,
}

impl Source {
    fn batch(&self, epoch: u64, indices: &[usize], augment: bool) -> Result<Batch> {
        let shape = self.images[indices[0]].shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * self.images[indices[0]].numel());
        for &i in indices {
            let img = &self.images[i];
            if img.shape() != shape {
                return Err(config(format!(
                    "image {i} has shape {:?}, expected {shape:?}",
                    img.shape()
                )));
            }
            if augment {
                let plan = AugmentPlan::sample(&mut augment_rng(self.seed, epoch, i));
                data.extend_from_slice(plan.apply(img)?.data());
            } else {
                data.extend_from_slice(img.data());
            }
        }
        let mut dims = vec![indices.len()];
        dims.extend(shape);
        Ok(Batch {
            images: Tensor::new(&dims, data)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        })
    }
}

/// Serves mini-batches of preprocessed images, optionally shuffled and
/// augmented. Batch contents depend only on `(seed, epoch)`; worker
/// threads change throughput, never results.
#[derive(Clone)]
pub struct DataLoader {
    source: Arc<Source>,
    batch_size: usize,
    shuffle: bool,
    augment: bool,
    workers: usize,
    prefetch: usize,
}

impl DataLoader {
    pub fn new(
        images: Vec<Tensor<f32>>,
        labels: Vec<usize>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(config(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if batch_size == 0 {
            return Err(config("batch_size must be positive"));
        }
        Ok(Self {
            source: Arc::new(Source {
                images,
                labels,
                seed,
            }),
            batch_size,
            shuffle: false,
            augment: false,
            workers: 0,
            prefetch: 2,
        })
    }

    pub fn shuffled(mut self, on: bool) -> Self {
        self.shuffle = on;
        self
    }

    pub fn augmented(mut self, on: bool) -> Self {
        self.augment = on;
        self
    }

    /// Number of background threads; 0 builds batches on the caller's thread.
    pub fn workers(mut self, n: usize) -> Self {
        self.workers = n;
        self
    }

    pub fn len(&self) -> usize {
        self.source.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.images.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.source.labels
    }

    pub fn num_batches(&self) -> usize {
        self.len().div_ceil(self.batch_size)
    }

    /// Sample order for `epoch`.
    pub fn order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if self.shuffle {
            order.shuffle(&mut rng_for(self.source.seed, &[stream::SHUFFLE, epoch]));
        }
        order
    }

    pub fn epoch(&self, epoch: u64) -> EpochBatches {
        let chunks: Vec<Vec<usize>> = self
            .order(epoch)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        let total = chunks.len();
        if self.workers == 0 || total == 0 {
            return EpochBatches {
                inner: Inner::Inline {
                    source: Arc::clone(&self.source),
                    chunks,
                    epoch,
                    augment: self.augment,
                },
                next: 0,
                total,
            };
        }
        let chunks = Arc::new(chunks);
        let mut receivers = Vec::new();
        let mut handles = Vec::new();
        for w in 0..self.workers.min(total) {
            let (tx, rx) = sync_channel(self.prefetch);
            let source = Arc::clone(&self.source);
            let chunks = Arc::clone(&chunks);
            let stride = self.workers.min(total);
            let augment = self.augment;
            handles.push(std::thread::spawn(move || {
                for b in (w..chunks.len()).step_by(stride) {
                    if tx.send(source.batch(epoch, &chunks[b], augment)).is_err() {
                        break;
                    }
                }
            }));
            receivers.push(rx);
        }
        EpochBatches {
            inner: Inner::Threaded { receivers, handles },
            next: 0,
            total,
        }
    }
}

enum Inner {
    Inline {
        source: Arc<Source>,
        chunks: Vec<Vec<usize>>,
        epoch: u64,
        augment: bool,
    },
    Threaded {
        receivers: Vec<Receiver<Result<Batch>>>,
        handles: Vec<JoinHandle<()>>,
    },
}

/// Batches of one epoch, delivered in order.
pub struct EpochBatches {
    inner: Inner,
    next: usize,
    total: usize,
}

impl Iterator for EpochBatches {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        let b = self.next;
        self.next += 1;
        Some(match &self.inner {
            Inner::Inline {
                source,
                chunks,
                epoch,
                augment,
            } => source.batch(*epoch, &chunks[b], *augment),
            Inner::Threaded { receivers, .. } => receivers[b % receivers.len()]
                .recv()
                .unwrap_or_else(|_| Err(crate::error::usage("loader worker exited early"))),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.next;
        (left, Some(left))
    }
}

impl Drop for EpochBatches {
    fn drop(&mut self) {
        if let Inner::Threaded { receivers, handles } = &mut self.inner {
            receivers.clear();
            for h in handles.drain(..) {
                let _ = h.join();
            }
        }
    }
}
