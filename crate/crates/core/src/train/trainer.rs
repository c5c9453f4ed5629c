use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::quant::Mode;
use crate::train::loss::{correct_count, loss_weights, softmax_ce};
use crate::train::model::Model;
use crate::train::optim::{OptimKind, Optimizer, Schedule};
use crate::train::ParamKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimKind,
    pub schedule: Schedule,
    /// λ0 of the L2 term.
    pub weight_decay: f64,
    /// Include transform matrices in the L2 term.
    pub l2_transforms: bool,
    /// Learning-rate multiplier for transform matrices. Their entries are
    /// up to an order of magnitude larger than the weights, so at the weight
    /// rate they barely move within a short adaptation budget.
    pub transform_lr_mult: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            optimizer: OptimKind::adam(),
            schedule: Schedule::Cosine,
            weight_decay: 0.0,
            l2_transforms: false,
            transform_lr_mult: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn final_val_acc(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_acc)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for e in &self.epochs {
            wr.serialize(e)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let epochs = rd.deserialize().collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { epochs })
    }
}

/// Batches of indices in order.
fn batches(n: usize, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let size = size.max(1);
    (0..n.div_ceil(size)).map(move |b| b * size..((b + 1) * size).min(n))
}

/// Mean loss and accuracy over `data` in eval mode.
pub fn evaluate(model: &mut Model, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct) = (0.0, 0);
    for r in batches(data.len(), batch_size) {
        let (x, labels) = data.batch(&idx[r])?;
        let (logits, _) = model.forward(&x, Mode::Eval)?;
        let (l, _) = softmax_ce(&logits, &labels)?;
        loss += l * labels.len() as f64;
        correct += correct_count(&logits, &labels);
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// One forward-only pass that calibrates quantization ranges without
/// touching parameters.
pub fn warmup(model: &mut Model, data: &Dataset, batch_size: usize) -> Result<()> {
    let idx: Vec<usize> = (0..data.len()).collect();
    for r in batches(data.len(), batch_size) {
        let (x, _) = data.batch(&idx[r])?;
        model.forward(&x, Mode::Warmup)?;
    }
    Ok(())
}

/// One gradient step on a batch; returns `(loss, correct)`.
pub fn train_step(
    model: &mut Model,
    opt: &mut Optimizer,
    cfg: &TrainConfig,
    x: &crate::numerics::Tensor4,
    labels: &[usize],
    lr: f64,
    step: usize,
) -> Result<(f64, usize)> {
    model.zero_grad();
    let (logits, tape) = model.forward(x, Mode::Train)?;
    if let Some(layer) = &tape.first_nonfinite {
        return Err(Error::NonFinite { layer: layer.clone(), step });
    }
    let mut params = model.params_mut();
    let (loss, grad) = loss_weights(&logits, labels, &mut params, cfg.weight_decay, cfg.l2_transforms)?;
    drop(params);
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: "loss".into(), step });
    }
    let correct = correct_count(&logits, labels);
    model.backward(&tape, &grad)?;
    let mut params: Vec<_> = model.params_mut().into_iter().filter(|p| p.kind != ParamKind::Arch).collect();
    opt.step(&mut params, lr)?;
    Ok((loss, correct))
}

/// Trains `model` on `train`, evaluating on `val` after every epoch.
pub fn train(model: &mut Model, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer);
    opt.transform_lr_mult = cfg.transform_lr_mult;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut report = TrainReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        let mut lr = cfg.lr;
        for r in batches(train.len(), cfg.batch_size) {
            let (x, labels) = train.batch(&order[r])?;
            lr = cfg.schedule.lr(cfg.lr, step, total);
            let (l, c) = train_step(model, &mut opt, cfg, &x, &labels, lr, step)?;
            loss_sum += l * labels.len() as f64;
            correct += c;
            step += 1;
        }
        let n = train.len().max(1) as f64;
        let (val_loss, val_acc) = evaluate(model, val, cfg.batch_size)?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {} loss {:.4} acc {:.3} val_loss {:.4} val_acc {:.3}",
            rec.epoch,
            rec.train_loss,
            rec.train_acc,
            rec.val_loss,
            rec.val_acc
        );
        report.epochs.push(rec);
    }
    Ok(report)
}
