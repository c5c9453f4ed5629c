//! Inference-path convolution algorithms and their analytic cost model.

mod cost;
mod direct;
mod pool;
mod winograd;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{out_extent, Scalar, Tensor4};
use crate::quant::QSpec;
use crate::transforms::default_transform;

pub use cost::{count_mults, mults_per_output, transform_ops, CostModel};
pub use direct::{conv2d_direct, conv2d_im2col, conv2d_im2row};
pub use pool::{conv2d_maxpool_stride_replace, maxpool2x2, maxpool2x2_backward};
pub use winograd::{
    conv2d_winograd, conv2d_winograd_with, filter_transform, hadamard_accumulate,
    input_transform, output_transform, quantize_stage, TileGrid, WinogradWeights,
};

/// Geometry of one convolution layer (square kernels and strides).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn new(in_ch: usize, out_ch: usize, in_h: usize, in_w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let s = Self {
            in_ch,
            out_ch,
            in_h,
            in_w,
            k,
            stride,
            pad,
        };
        s.validate()?;
        Ok(s)
    }

    /// `pad = k / 2`, stride 1: output size equals input size.
    pub fn same(in_ch: usize, out_ch: usize, size: usize, k: usize) -> Result<Self> {
        Self::new(in_ch, out_ch, size, size, k, 1, k / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.k, 3 | 5) {
            return Err(Error::Shape(format!("kernel size {} not in {{3, 5}}", self.k)));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Shape(format!("stride {} not in {{1, 2}}", self.stride)));
        }
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err(Error::Shape("channel counts must be >= 1".into()));
        }
        self.out_hw().map(|_| ())
    }

    pub fn out_hw(&self) -> Result<(usize, usize)> {
        match (
            out_extent(self.in_h, self.k, self.stride, self.pad),
            out_extent(self.in_w, self.k, self.stride, self.pad),
        ) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::Shape(format!(
                "{}x{} input, k={}, stride={}, pad={} has no integral output",
                self.in_h, self.in_w, self.k, self.stride, self.pad
            ))),
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.k, self.k]
    }

    pub(crate) fn check_operands<S: Scalar>(&self, x: &Tensor4<S>, w: &Tensor4<S>) -> Result<()> {
        if w.dims() != self.weight_dims() {
            return Err(Error::Shape(format!(
                "weights {:?} do not match {:?}",
                w.dims(),
                self.weight_dims()
            )));
        }
        if x.c() != self.in_ch || x.h() != self.in_h || x.w() != self.in_w {
            return Err(Error::Shape(format!(
                "input {:?} does not match {} ch {}x{}",
                x.dims(),
                self.in_ch,
                self.in_h,
                self.in_w
            )));
        }
        Ok(())
    }
}

/// Convolution algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConvAlgo {
    Direct,
    Im2row,
    Im2col,
    /// Winograd F(m×m, k×k).
    Winograd(usize),
}

impl ConvAlgo {
    pub fn is_winograd(self) -> bool {
        matches!(self, ConvAlgo::Winograd(_))
    }

    pub fn check(self, shape: &ConvShape) -> Result<()> {
        if let ConvAlgo::Winograd(m) = self {
            if shape.stride != 1 {
                return Err(Error::UnsupportedAlgo(format!(
                    "Winograd F{m} needs stride 1, got {}",
                    shape.stride
                )));
            }
            if m == 0 {
                return Err(Error::UnsupportedAlgo("Winograd tile m must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn name(self) -> String {
        match self {
            ConvAlgo::Direct => "direct".into(),
            ConvAlgo::Im2row => "im2row".into(),
            ConvAlgo::Im2col => "im2col".into(),
            ConvAlgo::Winograd(m) => format!("wg{m}"),
        }
    }
}

impl std::fmt::Display for ConvAlgo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for ConvAlgo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "direct" => Ok(ConvAlgo::Direct),
            "im2row" => Ok(ConvAlgo::Im2row),
            "im2col" => Ok(ConvAlgo::Im2col),
            _ => {
                let digits = lower
                    .strip_prefix("wg")
                    .or_else(|| lower.strip_prefix("wa-f"))
                    .or_else(|| lower.strip_prefix('f'))
                    .ok_or_else(|| Error::Config(format!("unknown convolution algorithm {s:?}")))?;
                digits
                    .parse::<usize>()
                    .ok()
                    .filter(|m| *m >= 1)
                    .map(ConvAlgo::Winograd)
                    .ok_or_else(|| Error::Config(format!("unknown convolution algorithm {s:?}")))
            }
        }
    }
}

impl Serialize for ConvAlgo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for ConvAlgo {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Runs `algo` on `x`. Winograd uses the default Cook-Toom transform for the
/// kernel size; `qspec` only affects Winograd stages.
pub fn conv2d<S: Scalar>(x: &Tensor4<S>, w: &Tensor4<S>, shape: &ConvShape, algo: ConvAlgo, qspec: &QSpec) -> Result<Tensor4<S>> {
    algo.check(shape)?;
    match algo {
        ConvAlgo::Direct => conv2d_direct(x, w, shape),
        ConvAlgo::Im2row => conv2d_im2row(x, w, shape),
        ConvAlgo::Im2col => conv2d_im2col(x, w, shape),
        ConvAlgo::Winograd(m) => {
            let tf = default_transform(m, shape.k)?.cast(|v| S::from_rational(v));
            conv2d_winograd(x, w, &tf, shape, qspec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_names_roundtrip() {
        for a in [ConvAlgo::Direct, ConvAlgo::Im2row, ConvAlgo::Im2col, ConvAlgo::Winograd(4)] {
            assert_eq!(a.name().parse::<ConvAlgo>().unwrap(), a);
        }
        assert_eq!("WA-F6".parse::<ConvAlgo>().unwrap(), ConvAlgo::Winograd(6));
        assert!("fft".parse::<ConvAlgo>().is_err());
    }

    #[test]
    fn shape_validation() {
        assert!(ConvShape::new(1, 1, 8, 8, 3, 1, 1).is_ok());
        assert!(ConvShape::new(1, 1, 8, 8, 7, 1, 1).is_err());
        assert!(ConvShape::new(1, 1, 8, 8, 3, 3, 1).is_err());
        assert!(ConvShape::new(1, 1, 8, 8, 3, 2, 0).is_err());
        let s = ConvShape::new(1, 1, 7, 7, 3, 2, 1).unwrap();
        assert!(matches!(ConvAlgo::Winograd(2).check(&s), Err(Error::UnsupportedAlgo(_))));
    }
}
