//! Winograd-aware quantized convolution.
//!
//! Cook-Toom transform synthesis, direct/im2row/im2col/Winograd
//! convolution, fake-quantized Winograd layers with learnable transforms
//! and analytic backprop, desk-scale training, a convolution latency
//! benchmark and a latency-aware per-layer algorithm search.

pub mod error;
pub mod numerics;
pub mod conv;
pub mod quant;
pub mod transforms;
pub mod train;
pub mod nas;
pub mod bench;
pub mod data;

pub use error::{read_file, read_text, Error, Result};
