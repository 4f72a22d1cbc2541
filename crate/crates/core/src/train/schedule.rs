//! Validation-loss driven learning-rate reduction and early stopping.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.5,
            patience: 3,
            min_delta: 1e-4,
            min_lr: 1e-6,
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has failed
/// to improve by more than `min_delta` for `patience` consecutive reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    lr: f64,
    best: f64,
    stagnant: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, config: PlateauConfig) -> Self {
        PlateauScheduler {
            config,
            lr: initial_lr,
            best: f64::INFINITY,
            stagnant: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Reports one epoch's validation loss and returns the learning rate to
    /// use from now on.
    pub fn update(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.config.min_delta {
            self.best = val_loss;
            self.stagnant = 0;
        } else {
            self.stagnant += 1;
            if self.stagnant >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.stagnant = 0;
            }
        }
        self.lr
    }
}

/// Signals a stop after `patience` consecutive non-improving epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
            epoch: 0,
        }
    }

    /// 1-based epoch of the best loss so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records an epoch; returns `(improved, should_stop)`.
    pub fn update(&mut self, val_loss: f64) -> (bool, bool) {
        self.epoch += 1;
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = Some(self.epoch);
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }
}

/// Per-epoch policy of the training loop: the early-stop check sees each
/// validation loss first, and the plateau schedule is only advanced when
/// training continues.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPolicy {
    pub plateau: PlateauScheduler,
    pub stopper: EarlyStopping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EpochPolicy {
    pub fn new(initial_lr: f64, plateau: PlateauConfig, early_stop_patience: usize) -> Self {
        EpochPolicy {
            plateau: PlateauScheduler::new(initial_lr, plateau),
            stopper: EarlyStopping::new(early_stop_patience, plateau.min_delta),
        }
    }

    /// Learning rate for the next epoch.
    pub fn lr(&self) -> f64 {
        self.plateau.lr()
    }

    pub fn observe(&mut self, val_loss: f64) -> Verdict {
        let (improved, stop) = self.stopper.update(val_loss);
        if !stop {
            self.plateau.update(val_loss);
        }
        Verdict { improved, stop }
    }
}
