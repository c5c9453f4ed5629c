use serde::{Deserialize, Serialize};

/// Role of a parameter; decides weight decay and learning-rate group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Winograd `G`, `Bᵀ`, `Aᵀ`.
    Transform,
    /// Batch-norm scale and shift.
    Norm,
    /// Architecture logits of a searchable layer.
    Arch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Frozen parameters never receive gradients or optimizer updates.
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, kind: ParamKind, dims: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            kind,
            dims,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn sq_norm(&self) -> f64 {
        self.value.iter().map(|v| v * v).sum()
    }
}
