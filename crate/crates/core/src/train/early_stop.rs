/// Stops once validation loss has gone `patience` consecutive epochs
/// without a strictly lower value than the best so far.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the loss of `epoch`; returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if self.best.is_none_or(|b| val_loss < b) {
            self.best = Some(val_loss);
            self.best_epoch = epoch;
            self.stale = 0;
            false
        } else {
            self.stale += 1;
            self.stale >= self.patience
        }
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Last epoch (1-based) a run with these validation losses would train.
pub fn simulate_early_stopping(val_losses: &[f64], patience: usize, max_epochs: usize) -> usize {
    let mut es = EarlyStopping::new(patience);
    let mut last = 0;
    for (i, &l) in val_losses.iter().take(max_epochs).enumerate() {
        last = i + 1;
        if es.observe(last, l) {
            break;
        }
    }
    last
}
