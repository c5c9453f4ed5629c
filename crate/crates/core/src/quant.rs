//! Per-tensor symmetric uniform quantization: range observers, fake
//! quantization and the clipped straight-through gradient.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{max_abs, Tensor4};

pub const DEFAULT_MOMENTUM: f64 = 0.99;

/// Bit width of a quantization node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bits {
    Int(u8),
    /// Quantization disabled.
    Float32,
}

impl Bits {
    pub fn as_u32(self) -> u32 {
        match self {
            Bits::Int(b) => b as u32,
            Bits::Float32 => 32,
        }
    }

    /// `8 → Int(8)`, `32 → Float32`; other widths must lie in `2..=16`.
    pub fn from_u32(b: u32) -> Result<Self> {
        match b {
            32 => Ok(Bits::Float32),
            2..=16 => Ok(Bits::Int(b as u8)),
            _ => Err(Error::Config(format!(
                "bit width {b} not supported (2..=16 or 32)"
            ))),
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Bits::Float32)
    }
}

impl std::fmt::Display for Bits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bits::Int(b) => write!(f, "int{b}"),
            Bits::Float32 => write!(f, "float32"),
        }
    }
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bits::Int(b) => s.serialize_u8(*b),
            Bits::Float32 => s.serialize_str("float32"),
        }
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Bits::from_u32(n).map_err(serde::de::Error::custom),
            Raw::Str(s) if s.eq_ignore_ascii_case("float32") || s.eq_ignore_ascii_case("fp32") => {
                Ok(Bits::Float32)
            }
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unknown bit width {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSpec {
    pub bits: Bits,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
}

fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}

impl QSpec {
    pub fn new(bits: Bits) -> Self {
        Self {
            bits,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn int(bits: u8) -> Self {
        Self::new(Bits::Int(bits))
    }

    pub fn float32() -> Self {
        Self::new(Bits::Float32)
    }

    pub fn validate(&self) -> Result<()> {
        if let Bits::Int(b) = self.bits {
            if !(2..=16).contains(&b) {
                return Err(Error::Config(format!("bit width {b} outside 2..=16")));
            }
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "observer momentum {} outside (0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }

    pub fn is_float(&self) -> bool {
        self.bits.is_float()
    }

    /// `2^(bits-1) - 1`, or `None` for float.
    pub fn qmax(&self) -> Option<i64> {
        match self.bits {
            Bits::Int(b) => Some((1i64 << (b - 1)) - 1),
            Bits::Float32 => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParams {
    pub scale: f64,
    pub qmax: i64,
}

impl QParams {
    /// Symmetric parameters covering `[-max_abs, max_abs]`.
    pub fn from_max_abs(max_abs: f64, qmax: i64) -> Self {
        let scale = if max_abs > 0.0 { max_abs / qmax as f64 } else { 1.0 };
        Self { scale, qmax }
    }

    #[inline]
    pub fn range(&self) -> f64 {
        self.qmax as f64 * self.scale
    }

    #[inline]
    pub fn quantize(&self, v: f64) -> f64 {
        let q = (v / self.scale).round();
        let m = self.qmax as f64;
        q.clamp(-m, m) * self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeObserver {
    pub running_max_abs: f64,
    pub initialized: bool,
    pub momentum: f64,
}

impl Default for RangeObserver {
    fn default() -> Self {
        Self::new(DEFAULT_MOMENTUM)
    }
}

impl RangeObserver {
    pub fn new(momentum: f64) -> Self {
        Self {
            running_max_abs: 0.0,
            initialized: false,
            momentum,
        }
    }

    pub fn update_with(&mut self, batch_max_abs: f64) {
        if self.initialized {
            self.running_max_abs =
                self.momentum * self.running_max_abs + (1.0 - self.momentum) * batch_max_abs;
        } else {
            self.running_max_abs = batch_max_abs;
            self.initialized = true;
        }
    }

    pub fn update(&mut self, x: &Tensor4) {
        self.update_with(x.max_abs());
    }
}

pub fn observer_update(mut obs: RangeObserver, x: &Tensor4) -> RangeObserver {
    obs.update(x);
    obs
}

pub fn qparams_from(obs: &RangeObserver, spec: &QSpec) -> Result<QParams> {
    let qmax = spec
        .qmax()
        .ok_or_else(|| Error::State("float32 spec has no quantization parameters".into()))?;
    if !obs.initialized {
        return Err(Error::State("range observer used before initialization".into()));
    }
    Ok(QParams::from_max_abs(obs.running_max_abs, qmax))
}

pub fn fake_quant_slice(x: &mut [f64], qp: &QParams) {
    for v in x.iter_mut() {
        *v = qp.quantize(*v);
    }
}

pub fn fake_quant(x: &Tensor4, qp: &QParams) -> Tensor4 {
    x.map(|v| qp.quantize(*v))
}

/// Clipped straight-through estimator applied in place: gradient survives
/// where `|x| <= qmax * scale`.
pub fn ste_mask_slice(grad: &mut [f64], x: &[f64], qp: &QParams) {
    let range = qp.range();
    for (g, v) in grad.iter_mut().zip(x) {
        if v.abs() > range {
            *g = 0.0;
        }
    }
}

pub fn fake_quant_backward(grad_out: &Tensor4, x: &Tensor4, qp: &QParams) -> Result<Tensor4> {
    if grad_out.dims() != x.dims() {
        return shape_err(format!(
            "fake_quant_backward: grad {:?} vs input {:?}",
            grad_out.dims(),
            x.dims()
        ));
    }
    let mut g = grad_out.clone();
    ste_mask_slice(g.data_mut(), x.data(), qp);
    Ok(g)
}

/// How a forward pass treats quantization state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
    /// Forward only: observers update, parameters and batch statistics stay frozen.
    Warmup,
}

impl Mode {
    pub fn updates_observers(self) -> bool {
        matches!(self, Mode::Train | Mode::Warmup)
    }
}

/// One quantization point of a layer: an observer plus the rule for picking
/// its range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QNode {
    pub observer: RangeObserver,
    /// Weights use the current max-abs at every step instead of the EMA.
    pub use_current_range: bool,
}

impl QNode {
    pub fn activation(momentum: f64) -> Self {
        Self {
            observer: RangeObserver::new(momentum),
            use_current_range: false,
        }
    }

    pub fn weight(momentum: f64) -> Self {
        Self {
            observer: RangeObserver::new(momentum),
            use_current_range: true,
        }
    }

    /// Updates the observer as `mode` dictates and returns the parameters to
    /// quantize `x` with, or `None` when the spec is float.
    pub fn observe(&mut self, x: &[f64], spec: &QSpec, mode: Mode) -> Option<QParams> {
        let qmax = spec.qmax()?;
        let cur = max_abs(x);
        let range = if self.use_current_range {
            if mode.updates_observers() {
                self.observer.update_with(cur);
            }
            cur
        } else if mode.updates_observers() {
            self.observer.update_with(cur);
            self.observer.running_max_abs
        } else if self.observer.initialized {
            self.observer.running_max_abs
        } else {
            // uninitialized observer at eval: fall back to the batch range
            cur
        };
        Some(QParams::from_max_abs(range, qmax))
    }

    /// Fake-quantizes `x` in place and returns the parameters used, or
    /// `None` when the spec is float.
    pub fn apply(&mut self, x: &mut [f64], spec: &QSpec, mode: Mode) -> Option<QParams> {
        let qp = self.observe(x, spec, mode)?;
        fake_quant_slice(x, &qp);
        Some(qp)
    }

    /// Like [`QNode::apply`], also returning the straight-through mask
    /// (`true` where the gradient passes).
    pub fn apply_masked(&mut self, x: &mut [f64], spec: &QSpec, mode: Mode) -> Option<Vec<bool>> {
        let qp = self.observe(x, spec, mode)?;
        let range = qp.range();
        let mask = x.iter().map(|v| v.abs() <= range).collect();
        fake_quant_slice(x, &qp);
        Some(mask)
    }
}

/// Zeroes `grad` where `mask` is false; `None` passes everything.
pub fn apply_mask(grad: &mut [f64], mask: &Option<Vec<bool>>) {
    if let Some(mask) = mask {
        for (g, keep) in grad.iter_mut().zip(mask) {
            if !keep {
                *g = 0.0;
            }
        }
    }
}
