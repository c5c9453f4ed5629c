use crate::conv::{ConvAlgo, ConvShape};
use crate::error::Result;
use crate::numerics::{rat, Rational};

/// Multiplications in the inner-product (direct, lowered) or Hadamard
/// (Winograd) stage for one input image.
pub fn count_mults(algo: ConvAlgo, shape: &ConvShape) -> Result<u64> {
    algo.check(shape)?;
    let (oh, ow) = shape.out_hw()?;
    let ch = (shape.in_ch * shape.out_ch) as u64;
    Ok(match algo {
        ConvAlgo::Direct | ConvAlgo::Im2row | ConvAlgo::Im2col => {
            (oh * ow * shape.k * shape.k) as u64 * ch
        }
        ConvAlgo::Winograd(m) => {
            let n = (m + shape.k - 1) as u64;
            (oh.div_ceil(m) * ow.div_ceil(m)) as u64 * n * n * ch
        }
    })
}

/// Multiplications per output element for a single channel pair.
pub fn mults_per_output(algo: ConvAlgo, shape: &ConvShape) -> Result<Rational> {
    let single = ConvShape {
        in_ch: 1,
        out_ch: 1,
        ..*shape
    };
    let (oh, ow) = shape.out_hw()?;
    Ok(rat(count_mults(algo, &single)? as i64, (oh * ow) as i64))
}

/// Multiplications spent in the input and output transforms of a Winograd
/// layer, counting dense matrix products (`Bᵀ d B` costs `2n³`, `Aᵀ M A`
/// costs `m n² + m² n`). Filter transforms are precomputed and excluded.
/// Returns `(input, output)`; zero for non-Winograd algorithms.
pub fn transform_ops(algo: ConvAlgo, shape: &ConvShape) -> Result<(u64, u64)> {
    algo.check(shape)?;
    let ConvAlgo::Winograd(m) = algo else {
        return Ok((0, 0));
    };
    let (oh, ow) = shape.out_hw()?;
    let n = (m + shape.k - 1) as u64;
    let m64 = m as u64;
    let tiles = (oh.div_ceil(m) * ow.div_ceil(m)) as u64;
    let input = tiles * shape.in_ch as u64 * 2 * n * n * n;
    let output = tiles * shape.out_ch as u64 * (m64 * n * n + m64 * m64 * n);
    Ok((input, output))
}

/// Analytic latency proxy: `mults + κ · transform ops`, scaled by the bit
/// width relative to 32 and converted to milliseconds at one operation per
/// nanosecond.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub kappa: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { kappa: 1.0 }
    }
}

impl CostModel {
    pub fn ops(&self, algo: ConvAlgo, shape: &ConvShape) -> Result<f64> {
        let (ti, to) = transform_ops(algo, shape)?;
        Ok(count_mults(algo, shape)? as f64 + self.kappa * (ti + to) as f64)
    }

    pub fn latency_ms(&self, algo: ConvAlgo, shape: &ConvShape, bits: u32) -> Result<f64> {
        Ok(self.ops(algo, shape)? * bits as f64 / 32.0 * 1e-6)
    }

    /// Share of the proxy spent in transforms.
    pub fn transform_fraction(&self, algo: ConvAlgo, shape: &ConvShape) -> Result<f64> {
        let (ti, to) = transform_ops(algo, shape)?;
        let total = self.ops(algo, shape)?;
        Ok(if total > 0.0 {
            self.kappa * (ti + to) as f64 / total
        } else {
            0.0
        })
    }
}
