/// Outcome of feeding one validation loss to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// Keep training; `improved` says whether this epoch is the new best.
    Continue { improved: bool },
    Stop { best_epoch: usize },
}

/// Patience-based early stopping on validation loss. Epochs are 1-based.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
            epoch: 0,
        }
    }

    pub fn update(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
            return StopDecision::Continue { improved: true };
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop {
                best_epoch: self.best_epoch,
            }
        } else {
            StopDecision::Continue { improved: false }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Halves (by `factor`) the learning rate after `patience` stagnant epochs.
#[derive(Debug, Clone)]
pub struct LrPlateau {
    factor: f64,
    patience: usize,
    floor: f64,
    min_delta: f64,
    best: f64,
    stale: usize,
}

impl LrPlateau {
    pub fn new(factor: f64, patience: usize, floor: f64, min_delta: f64) -> Self {
        Self {
            factor,
            patience,
            floor,
            min_delta,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns the learning rate to use from the next epoch on.
    pub fn update(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.stale = 0;
            return lr;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            return (lr * self.factor).max(self.floor);
        }
        lr
    }
}
