use serde::{Deserialize, Serialize};

use crate::conv::ConvAlgo;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::quant::QSpec;
use crate::train::model::{LayerSpec, Model};
use crate::train::trainer::{evaluate, train, warmup, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    /// Validation accuracy of the source model.
    pub source_acc: f64,
    /// Validation accuracy right after the weight copy and warmup pass.
    pub warmup_acc: f64,
    pub train: TrainReport,
}

/// Re-targets a model trained with a non-Winograd algorithm to `target`,
/// copies its weights, calibrates ranges with one warmup pass over `train_ds`,
/// then fine-tunes for `cfg.epochs`.
pub fn adapt(
    src: &mut Model,
    target: ConvAlgo,
    bits: QSpec,
    flex: bool,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, AdaptReport)> {
    for l in &src.spec.layers {
        if let LayerSpec::Conv(c) = l {
            if !c.fixed && c.algo.is_winograd() {
                return Err(Error::Config(format!("source layer {} already uses {}", c.name, c.algo)));
            }
            if target.is_winograd() && !c.fixed && c.k != 3 && c.k != 5 {
                return Err(Error::Shape(format!("layer {}: {}x{} kernel has no {target} transform", c.name, c.k, c.k)));
            }
        }
    }
    let (_, source_acc) = evaluate(src, val_ds, cfg.batch_size)?;
    let spec = src.spec.retarget(target, bits, flex);
    let mut model = Model::build(&spec, cfg.seed)?;
    model.load_state_from(src);
    warmup(&mut model, train_ds, cfg.batch_size)?;
    let (_, warmup_acc) = evaluate(&mut model, val_ds, cfg.batch_size)?;
    let report = train(&mut model, train_ds, val_ds, cfg)?;
    Ok((model, AdaptReport { source_acc, warmup_acc, train: report }))
}
