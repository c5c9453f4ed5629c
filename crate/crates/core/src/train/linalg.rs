//! Small dense f64 kernels used by the training layers.

use rayon::prelude::*;

/// `c (+)= a · b` with `a` `r×k`, `b` `k×c_cols`, row-major.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], r: usize, k: usize, cols: usize) {
    debug_assert_eq!(a.len(), r * k);
    debug_assert_eq!(b.len(), k * cols);
    debug_assert_eq!(c.len(), r * cols);
    let row = |(i, crow): (usize, &mut [f64])| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * cols..(kk + 1) * cols];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if r * k * cols > 1 << 16 {
        c.par_chunks_mut(cols).enumerate().for_each(row);
    } else {
        c.chunks_mut(cols).enumerate().for_each(row);
    }
}

pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, cols: usize) -> Vec<f64> {
    let mut c = vec![0.0; r * cols];
    matmul_acc(a, b, &mut c, r, k, cols);
    c
}

pub fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

/// Gradient of `Y = T X Tᵀ` with respect to `T` (`rows × inner`), added
/// into `grad_t`: `dY T Xᵀ + dYᵀ T X`.
pub fn sandwich_grad_t(t: &[f64], x: &[f64], dy: &[f64], rows: usize, inner: usize, grad_t: &mut [f64]) {
    // p = T X, q = T Xᵀ, both rows × inner
    let mut p = vec![0.0; rows * inner];
    let mut q = vec![0.0; rows * inner];
    for i in 0..rows {
        for k in 0..inner {
            let tv = t[i * inner + k];
            if tv == 0.0 {
                continue;
            }
            for j in 0..inner {
                p[i * inner + j] += tv * x[k * inner + j];
                q[i * inner + j] += tv * x[j * inner + k];
            }
        }
    }
    for i in 0..rows {
        for a in 0..rows {
            let dya = dy[i * rows + a];
            let dyt = dy[a * rows + i];
            for j in 0..inner {
                grad_t[i * inner + j] += dya * q[a * inner + j] + dyt * p[a * inner + j];
            }
        }
    }
}
