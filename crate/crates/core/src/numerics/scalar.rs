use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Exact rational scalar. `BigRational` keeps itself reduced with a positive
/// denominator, and zero is stored as 0/1.
pub type Rational = BigRational;

/// Field the convolution kernels are generic over: `f64` or [`Rational`].
pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + Send
    + Sync
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn from_i64(v: i64) -> Self;
    fn as_f64(&self) -> f64;
    fn abs_val(&self) -> Self;
    /// True when the value is exactly zero in this field.
    fn is_exact_zero(&self) -> bool {
        self.is_zero()
    }
    fn from_rational(r: &Rational) -> Self;
    /// Storage rounding at a stage boundary; a no-op for exact fields.
    #[inline]
    fn round_storage(&mut self, _p: Precision) {}
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    #[inline]
    fn as_f64(&self) -> f64 {
        *self
    }
    #[inline]
    fn abs_val(&self) -> Self {
        self.abs()
    }
    fn from_rational(r: &Rational) -> Self {
        rational_to_f64(r)
    }
    #[inline]
    fn round_storage(&mut self, p: Precision) {
        *self = p.apply(*self);
    }
}

impl Scalar for Rational {
    /// Exact conversion of the binary value; non-finite inputs map to zero.
    fn from_f64(v: f64) -> Self {
        BigRational::from_float(v).unwrap_or_else(BigRational::zero)
    }
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn as_f64(&self) -> f64 {
        rational_to_f64(self)
    }
    fn abs_val(&self) -> Self {
        self.abs()
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
}

pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Rounds to the nearest `f32` and widens back, emulating single precision
/// storage at an operation boundary.
#[inline]
pub fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Storage precision applied at operation boundaries of the float kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    /// Results are rounded to the nearest `f32` after every stage.
    F32,
}

impl Precision {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => round_f32(v),
        }
    }

    pub fn apply_slice(self, data: &mut [f64]) {
        if self == Precision::F32 {
            data.iter_mut().for_each(|v| *v = round_f32(*v));
        }
    }
}
