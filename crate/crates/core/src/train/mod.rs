//! Loss, optimizer, learning-rate policy, fold splitting and the training loop.

mod adam;
mod kfold;
mod loss;
mod schedule;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, Adam, AdamConfig, AdamMoments};
pub use kfold::{kfold_split, split_validation};
pub use loss::{bce_loss, BinaryCrossEntropy, BCE_EPSILON};
pub use schedule::{EarlyStopping, EpochPolicy, PlateauConfig, PlateauScheduler, Verdict};

use crate::error::{Error, Result};
use crate::net::{Loss, Network};
use crate::scalar::Scalar;
use crate::slab::Slab;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau: PlateauConfig,
    pub early_stop_patience: usize,
    pub threshold: f64,
    pub k: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.001,
            batch_size: 2,
            max_epochs: 50,
            plateau: PlateauConfig::default(),
            early_stop_patience: 5,
            threshold: 0.5,
            k: 10,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.initial_lr.is_nan()
            || self.initial_lr <= 0.0
            || self.plateau.min_lr.is_nan()
            || self.plateau.min_lr <= 0.0
        {
            return bad("learning rates must be positive");
        }
        if !(self.plateau.factor > 0.0 && self.plateau.factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.k == 0 {
            return bad("batch size, epochs and fold count must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Random-access collection of training samples.
pub trait SlabSet<T> {
    fn len(&self) -> usize;
    fn slab(&self, index: usize) -> Result<Slab<T>>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> SlabSet<T> for [Slab<T>] {
    fn len(&self) -> usize {
        <[Slab<T>]>::len(self)
    }
    fn slab(&self, index: usize) -> Result<Slab<T>> {
        Ok(self[index].clone())
    }
}

impl<T: Scalar> SlabSet<T> for Vec<Slab<T>> {
    fn len(&self) -> usize {
        <[Slab<T>]>::len(self)
    }
    fn slab(&self, index: usize) -> Result<Slab<T>> {
        Ok(self[index].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch whose weights were restored at the end.
    pub best_epoch: usize,
    pub steps: usize,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,lr`, one line per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Packs slabs into `(B x 3 x H x W, B x 1 x H x W)` input and target tensors.
pub fn batch_tensors<T: Scalar>(slabs: &[Slab<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = slabs.first().ok_or(Error::EmptyDataset)?;
    let (h, w) = (first.height, first.width);
    let inputs: Vec<&[T]> = slabs.iter().map(|s| s.channels.as_slice()).collect();
    let x = Tensor::stack(&inputs, [3, h, w])?;
    let targets: Vec<Vec<T>> = slabs.iter().map(|s| s.target_as()).collect();
    let refs: Vec<&[T]> = targets.iter().map(Vec::as_slice).collect();
    let y = Tensor::stack(&refs, [1, h, w])?;
    Ok((x, y))
}

/// Mean inference-mode loss over a sample set, evaluated in batches.
pub fn evaluate_loss<T: Scalar, S: SlabSet<T> + ?Sized>(
    net: &Network<T>,
    set: &S,
    batch_size: usize,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let loss = BinaryCrossEntropy::default();
    let mut total = 0.0;
    let mut start = 0;
    while start < set.len() {
        let end = (start + batch_size).min(set.len());
        let slabs = (start..end)
            .map(|i| set.slab(i))
            .collect::<Result<Vec<_>>>()?;
        let (x, y) = batch_tensors(&slabs)?;
        let p = net.forward(&x)?;
        let l = loss.value(p.data(), y.data())?;
        total += l.to_f64().unwrap_or(f64::NAN) * (end - start) as f64;
        start = end;
    }
    Ok(total / set.len() as f64)
}

/// Trains with shuffled mini-batches, Adam, the plateau schedule and early
/// stopping on validation loss. The weights of the best validation epoch are
/// restored before returning.
pub fn fit<T, A, B>(
    net: &mut Network<T>,
    train: &A,
    val: &B,
    cfg: &TrainConfig,
) -> Result<TrainHistory>
where
    T: Scalar,
    A: SlabSet<T> + ?Sized,
    B: SlabSet<T> + ?Sized,
{
    fit_with(net, train, val, cfg, |_| {})
}

pub fn fit_with<T, A, B>(
    net: &mut Network<T>,
    train: &A,
    val: &B,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory>
where
    T: Scalar,
    A: SlabSet<T> + ?Sized,
    B: SlabSet<T> + ?Sized,
{
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let loss = BinaryCrossEntropy::default();
    let mut adam = Adam::new(AdamConfig::default());
    let mut policy = EpochPolicy::new(cfg.initial_lr, cfg.plateau, cfg.early_stop_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = net.params().to_vec();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut steps = 0;

    for epoch in 1..=cfg.max_epochs {
        let lr = policy.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let slabs = chunk
                .iter()
                .map(|&i| train.slab(i))
                .collect::<Result<Vec<_>>>()?;
            let (x, y) = batch_tensors(&slabs)?;
            let pass = net.gradients(&x, &y, &loss)?;
            adam.step(net, &pass.grads, lr)?;
            net.update_running_stats(&pass.batch_stats);
            loss_sum += pass.loss.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
            steps += 1;
        }
        let val_loss = evaluate_loss(net, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            lr,
        };
        on_epoch(&record);
        epochs.push(record);
        let verdict = policy.observe(val_loss);
        if verdict.improved {
            best = net.params().to_vec();
        }
        if verdict.stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    for (id, p) in best.into_iter().enumerate() {
        net.set_param(id, p.tensor)?;
    }
    Ok(TrainHistory {
        epochs,
        stop_reason,
        best_epoch: policy.stopper.best_epoch().unwrap_or(0),
        steps,
    })
}
