use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::numerics::{sandwich_into, Mat, Precision, Scalar};
use crate::quant::{Bits, QParams, QSpec};
use crate::transforms::WinogradTransform;

/// Fraction of exact-zero entries.
pub fn sparsity<S: Scalar>(mat: &Mat<S>) -> f64 {
    let total = mat.rows() * mat.cols();
    if total == 0 {
        return 1.0;
    }
    mat.data().iter().filter(|v| v.is_exact_zero()).count() as f64 / total as f64
}

/// Exact zero count and entry count, for callers that need the ratio as a
/// fraction rather than a float.
pub fn zero_count<S: Scalar>(mat: &Mat<S>) -> (usize, usize) {
    (
        mat.data().iter().filter(|v| v.is_exact_zero()).count(),
        mat.rows() * mat.cols(),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub max: f64,
    pub p95: f64,
    /// Per-trial relative errors in trial order.
    pub per_trial: Vec<f64>,
}

impl ErrorStats {
    pub fn from_samples(per_trial: Vec<f64>) -> Self {
        if per_trial.is_empty() {
            return Self {
                mean: 0.0,
                max: 0.0,
                p95: 0.0,
                per_trial,
            };
        }
        let mean = per_trial.iter().sum::<f64>() / per_trial.len() as f64;
        let max = per_trial.iter().cloned().fold(0.0, f64::max);
        let mut sorted = per_trial.clone();
        sorted.sort_by(f64::total_cmp);
        let idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
        Self {
            mean,
            max,
            p95: sorted[idx],
            per_trial,
        }
    }
}

fn quantize_stage(x: &mut [f64], bits: Bits) {
    match bits {
        Bits::Float32 => Precision::F32.apply_slice(x),
        Bits::Int(_) => {
            let qmax = QSpec::new(bits).qmax().expect("int spec");
            let qp = QParams::from_max_abs(crate::numerics::max_abs(x), qmax);
            crate::quant::fake_quant_slice(x, &qp);
        }
    }
}

/// Single-tile 2D Winograd with a quantization (or f32 rounding) step after
/// every stage; each stage takes its range from its own values.
pub fn quantized_tile(tf: &WinogradTransform<f64>, d: &[f64], g: &[f64], bits: Bits) -> Vec<f64> {
    let n = tf.tile();
    let (m, r) = (tf.m, tf.r);
    let mut dq = d.to_vec();
    let mut gq = g.to_vec();
    quantize_stage(&mut dq, bits);
    quantize_stage(&mut gq, bits);
    let mut u = vec![0.0; n * n];
    let mut scratch = vec![0.0; n * n.max(r)];
    sandwich_into(tf.g.data(), n, r, &gq, &mut scratch, &mut u);
    quantize_stage(&mut u, bits);
    let mut v = vec![0.0; n * n];
    sandwich_into(tf.bt.data(), n, n, &dq, &mut scratch, &mut v);
    quantize_stage(&mut v, bits);
    let mut had: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a * b).collect();
    quantize_stage(&mut had, bits);
    let mut y = vec![0.0; m * m];
    sandwich_into(tf.at.data(), m, n, &had, &mut scratch, &mut y);
    quantize_stage(&mut y, bits);
    y
}

fn direct_tile(d: &[f64], g: &[f64], n: usize, r: usize, m: usize) -> Vec<f64> {
    let mut y = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for u in 0..r {
                for v in 0..r {
                    acc += d[(i + u) * n + j + v] * g[u * r + v];
                }
            }
            y[i * m + j] = acc;
        }
    }
    y
}

/// Relative error of quantized single-tile Winograd against direct
/// correlation over `trials` random tiles drawn uniform in [-1, 1].
///
/// Per trial the error is `max|ŷ - y| / max(max|y|, 1e-8)` where `y` is the
/// direct result on the unquantized inputs.
pub fn transform_error_profile<S: Scalar>(
    tf: &WinogradTransform<S>,
    bits: Bits,
    trials: usize,
    seed: u64,
) -> Result<ErrorStats> {
    tf.validate()?;
    let tf = tf.cast(Scalar::as_f64);
    let n = tf.tile();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errs = Vec::with_capacity(trials);
    for _ in 0..trials {
        let d: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let g: Vec<f64> = (0..tf.r * tf.r).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let exact = direct_tile(&d, &g, n, tf.r, tf.m);
        let approx = quantized_tile(&tf, &d, &g, bits);
        let denom = crate::numerics::max_abs(&exact).max(1e-8);
        let err = exact
            .iter()
            .zip(&approx)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        errs.push(err / denom);
    }
    Ok(ErrorStats::from_samples(errs))
}
