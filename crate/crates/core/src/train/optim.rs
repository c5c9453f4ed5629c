use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{Param, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimKind {
    SgdNesterov { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimKind {
    pub fn adam() -> Self {
        OptimKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd() -> Self {
        OptimKind::SgdNesterov { momentum: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Cosine annealing from the base rate to zero over the run.
    Cosine,
}

impl Schedule {
    /// Learning rate after `step` of `total` steps.
    pub fn lr(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine if total == 0 => base,
            Schedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
    /// Update count per element, so masked entries keep their own bias correction.
    steps: Vec<u32>,
}

/// Per-parameter optimizer state, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimKind,
    /// Learning-rate multiplier for transform matrices.
    pub transform_lr_mult: f64,
    slots: HashMap<String, Slot>,
}

impl Optimizer {
    pub fn new(kind: OptimKind) -> Self {
        Self { kind, transform_lr_mult: 1.0, slots: HashMap::new() }
    }

    /// Updates every trainable parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        for p in params.iter_mut() {
            self.update(p, lr, None)?;
        }
        Ok(())
    }

    /// Updates only entries where `mask` is true; other entries and their
    /// state are left untouched.
    pub fn step_masked(&mut self, p: &mut Param, lr: f64, mask: &[bool]) -> Result<()> {
        self.update(p, lr, Some(mask))
    }

    fn update(&mut self, p: &mut Param, lr: f64, mask: Option<&[bool]>) -> Result<()> {
        if !p.trainable {
            return Ok(());
        }
        let lr = if p.kind == ParamKind::Transform { lr * self.transform_lr_mult } else { lr };
        let len = p.len();
        let slot = self.slots.entry(p.name.clone()).or_insert_with(|| Slot {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: vec![0; len],
        });
        if slot.m.len() != len {
            return Err(Error::State(format!("optimizer slot for {} has the wrong shape", p.name)));
        }
        let active = |i: usize| mask.is_none_or(|m| m[i]);
        match self.kind {
            OptimKind::SgdNesterov { momentum } => {
                for i in (0..len).filter(|&i| active(i)) {
                    let g = p.grad[i];
                    slot.m[i] = momentum * slot.m[i] + g;
                    p.value[i] -= lr * (g + momentum * slot.m[i]);
                }
            }
            OptimKind::Adam { beta1, beta2, eps } => {
                for i in (0..len).filter(|&i| active(i)) {
                    slot.steps[i] += 1;
                    let t = slot.steps[i] as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let g = p.grad[i];
                    slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * g;
                    slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * g * g;
                    let mh = slot.m[i] / c1;
                    let vh = slot.v[i] / c2;
                    p.value[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::new("w", ParamKind::Weight, vec![2], vec![1.0, -1.0]);
        p.grad = vec![0.3, -5.0];
        let mut opt = Optimizer::new(OptimKind::adam());
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] - 0.9).abs() < 1e-6);
        assert!((p.value[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn masked_entries_stay_put() {
        let mut p = Param::new("a", ParamKind::Arch, vec![3], vec![0.1, 0.2, 0.3]);
        p.grad = vec![1.0, 1.0, 1.0];
        let mut opt = Optimizer::new(OptimKind::Adam { beta1: 0.0, beta2: 0.999, eps: 1e-8 });
        opt.step_masked(&mut p, 0.01, &[true, false, true]).unwrap();
        assert_eq!(p.value[1], 0.2);
        assert!(p.value[0] < 0.1 && p.value[2] < 0.3);
    }

    #[test]
    fn sgd_nesterov_and_frozen() {
        let mut p = Param::new("w", ParamKind::Weight, vec![1], vec![1.0]);
        p.grad = vec![1.0];
        let mut opt = Optimizer::new(OptimKind::sgd());
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] - (1.0 - 0.1 * 1.9)).abs() < 1e-15);
        let mut f = Param::new("f", ParamKind::Transform, vec![1], vec![2.0]).frozen();
        f.grad = vec![1.0];
        opt.step(&mut [&mut f], 0.1).unwrap();
        assert_eq!(f.value[0], 2.0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(Schedule::Cosine.lr(1.0, 0, 10), 1.0);
        assert!(Schedule::Cosine.lr(1.0, 10, 10).abs() < 1e-15);
        assert_eq!(Schedule::Constant.lr(0.3, 7, 10), 0.3);
    }
}
