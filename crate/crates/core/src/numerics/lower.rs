use crate::error::{shape_err, Result};
use crate::numerics::{Mat, Scalar, Tensor4};

/// Output extent of a strided, padded window sweep; `None` when the extent is
/// not integral or is empty.
pub fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < k || (padded - k) % stride != 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn out_dims(x_h: usize, x_w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    match (out_extent(x_h, kh, stride, pad), out_extent(x_w, kw, stride, pad)) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => shape_err(format!(
            "{x_h}x{x_w} input with {kh}x{kw} kernel, stride {stride}, pad {pad} has no integral output"
        )),
    }
}

/// im2row lowering: one row per output pixel `(n, oh, ow)`, each row the
/// receptive field flattened channel-major (`c, u, v`), zero outside bounds.
pub fn im2row_lower<S: Scalar>(
    x: &Tensor4<S>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<Mat<S>> {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = out_dims(h, w, kh, kw, stride, pad)?;
    let cols = c * kh * kw;
    let mut data = vec![S::zero(); n * oh * ow * cols];
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let row = ((b * oh + i) * ow + j) * cols;
                for ch in 0..c {
                    let plane = x.plane(b, ch);
                    for u in 0..kh {
                        let y = (i * stride + u) as isize - pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let xx = (j * stride + v) as isize - pad as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            data[row + (ch * kh + u) * kw + v] =
                                plane[y as usize * w + xx as usize].clone();
                        }
                    }
                }
            }
        }
    }
    Mat::new(n * oh * ow, cols, data)
}

/// im2col lowering: the transpose orientation of [`im2row_lower`], one column
/// per output pixel.
pub fn im2col_lower<S: Scalar>(
    x: &Tensor4<S>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<Mat<S>> {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = out_dims(h, w, kh, kw, stride, pad)?;
    let rows = c * kh * kw;
    let cols = n * oh * ow;
    let mut data = vec![S::zero(); rows * cols];
    for ch in 0..c {
        for u in 0..kh {
            for v in 0..kw {
                let r = (ch * kh + u) * kw + v;
                for b in 0..n {
                    let plane = x.plane(b, ch);
                    for i in 0..oh {
                        let y = (i * stride + u) as isize - pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for j in 0..ow {
                            let xx = (j * stride + v) as isize - pad as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            data[r * cols + (b * oh + i) * ow + j] =
                                plane[y as usize * w + xx as usize].clone();
                        }
                    }
                }
            }
        }
    }
    Mat::new(rows, cols, data)
}

/// Adjoint of [`im2row_lower`]: scatters-adds row-matrix entries back into an
/// NCHW tensor of dims `dims`.
pub fn row2im(rows: &Mat<f64>, dims: [usize; 4], kh: usize, kw: usize, stride: usize, pad: usize) -> Result<Tensor4<f64>> {
    let [n, c, h, w] = dims;
    let (oh, ow) = out_dims(h, w, kh, kw, stride, pad)?;
    let cols = c * kh * kw;
    if rows.rows() != n * oh * ow || rows.cols() != cols {
        return shape_err("row2im: lowered matrix does not match dims");
    }
    let mut out = Tensor4::zeros(dims);
    let src = rows.data();
    let data = out.data_mut();
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let row = ((b * oh + i) * ow + j) * cols;
                for ch in 0..c {
                    let base = (b * c + ch) * h * w;
                    for u in 0..kh {
                        let y = (i * stride + u) as isize - pad as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let xx = (j * stride + v) as isize - pad as isize;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            data[base + y as usize * w + xx as usize] += src[row + (ch * kh + u) * kw + v];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(dims: [usize; 4]) -> Tensor4<f64> {
        let mut k = 0.0;
        Tensor4::from_fn(dims, |_| {
            k += 1.0;
            k
        })
    }

    #[test]
    fn single_window_is_flattened_input() {
        let x = seq([1, 1, 3, 3]);
        let m = im2row_lower(&x, 3, 3, 1, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 9));
        assert_eq!(m.data(), x.data());
    }

    #[test]
    fn four_windows_of_4x4() {
        let x = seq([1, 1, 4, 4]);
        let m = im2row_lower(&x, 3, 3, 1, 0).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 9));
        for (r, (i0, j0)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
            let expect: Vec<f64> = (0..3)
                .flat_map(|u| (0..3).map(move |v| ((i0 + u) * 4 + j0 + v + 1) as f64))
                .collect();
            assert_eq!(m.row(r), expect.as_slice());
        }
    }

    #[test]
    fn padding_zero_count_in_corners() {
        let x = Tensor4::from_fn([1, 1, 3, 3], |_| 1.0);
        let m = im2row_lower(&x, 3, 3, 1, 1).unwrap();
        assert_eq!((m.rows(), m.cols()), (9, 9));
        for corner in [0, 2, 6, 8] {
            assert_eq!(m.row(corner).iter().filter(|v| **v == 0.0).count(), 5);
        }
        // the center row sees the whole input
        assert_eq!(m.row(4).iter().filter(|v| **v == 0.0).count(), 0);
    }

    #[test]
    fn non_integral_output_is_rejected() {
        let x = seq([1, 1, 4, 4]);
        assert!(im2row_lower(&x, 3, 3, 2, 0).is_err());
    }

    #[test]
    fn im2col_is_transpose_of_im2row() {
        let x = seq([2, 3, 5, 5]);
        let r = im2row_lower(&x, 3, 3, 2, 1).unwrap();
        let c = im2col_lower(&x, 3, 3, 2, 1).unwrap();
        assert_eq!(r.transpose(), c);
    }
}
