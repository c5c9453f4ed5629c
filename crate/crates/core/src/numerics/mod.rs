//! Scalar fields, dense containers, GEMM and convolution lowering.

mod lower;
mod mat;
mod scalar;
mod tensor;

pub use lower::{im2col_lower, im2row_lower, out_extent, row2im};
pub use mat::{gemm, sandwich, sandwich_into, Mat};
pub use scalar::{rat, rational_to_f64, round_f32, Precision, Rational, Scalar};
pub use tensor::{max_abs, max_rel_err, rel_l2_err, Tensor4};
