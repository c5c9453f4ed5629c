use crate::conv::ConvShape;
use crate::error::Result;
use crate::numerics::{gemm, im2col_lower, im2row_lower, Mat, Scalar, Tensor4};

/// Direct correlation: `y[n,o,i,j] = Σ x[n,c,i·s+u-p,j·s+v-p]·w[o,c,u,v]`.
pub fn conv2d_direct<S: Scalar>(x: &Tensor4<S>, w: &Tensor4<S>, shape: &ConvShape) -> Result<Tensor4<S>> {
    shape.validate()?;
    shape.check_operands(x, w)?;
    let (oh, ow) = shape.out_hw()?;
    let (k, s, p) = (shape.k, shape.stride, shape.pad as isize);
    let (h, wd) = (shape.in_h as isize, shape.in_w as isize);
    let mut y = Tensor4::zeros([x.n(), shape.out_ch, oh, ow]);
    for b in 0..x.n() {
        for o in 0..shape.out_ch {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = S::zero();
                    for c in 0..shape.in_ch {
                        let plane = x.plane(b, c);
                        let filt = &w.plane(o, c);
                        for u in 0..k {
                            let yy = (i * s + u) as isize - p;
                            if yy < 0 || yy >= h {
                                continue;
                            }
                            for v in 0..k {
                                let xx = (j * s + v) as isize - p;
                                if xx < 0 || xx >= wd {
                                    continue;
                                }
                                let wv = &filt[u * k + v];
                                if wv.is_exact_zero() {
                                    continue;
                                }
                                acc = acc + plane[(yy * wd + xx) as usize].clone() * wv.clone();
                            }
                        }
                    }
                    let idx = y.index(b, o, i, j);
                    y.data_mut()[idx] = acc;
                }
            }
        }
    }
    Ok(y)
}

fn weight_rows<S: Scalar>(w: &Tensor4<S>) -> Result<Mat<S>> {
    let [o, c, kh, kw] = w.dims();
    Mat::new(o, c * kh * kw, w.data().to_vec())
}

/// im2row lowering followed by one GEMM against the flattened filters.
pub fn conv2d_im2row<S: Scalar>(x: &Tensor4<S>, w: &Tensor4<S>, shape: &ConvShape) -> Result<Tensor4<S>> {
    shape.validate()?;
    shape.check_operands(x, w)?;
    let (oh, ow) = shape.out_hw()?;
    let rows = im2row_lower(x, shape.k, shape.k, shape.stride, shape.pad)?;
    // (n·oh·ow) × out_ch
    let prod = gemm(&rows, &weight_rows(w)?.transpose())?;
    let n = x.n();
    let oc = shape.out_ch;
    let src = prod.data();
    Ok(Tensor4::from_fn([n, oc, oh, ow], |[b, o, i, j]| {
        src[((b * oh + i) * ow + j) * oc + o].clone()
    }))
}

/// im2col lowering: filters times the column matrix.
pub fn conv2d_im2col<S: Scalar>(x: &Tensor4<S>, w: &Tensor4<S>, shape: &ConvShape) -> Result<Tensor4<S>> {
    shape.validate()?;
    shape.check_operands(x, w)?;
    let (oh, ow) = shape.out_hw()?;
    let cols = im2col_lower(x, shape.k, shape.k, shape.stride, shape.pad)?;
    // out_ch × (n·oh·ow)
    let prod = gemm(&weight_rows(w)?, &cols)?;
    let n = x.n();
    let npix = n * oh * ow;
    let src = prod.data();
    Ok(Tensor4::from_fn([n, shape.out_ch, oh, ow], |[b, o, i, j]| {
        src[o * npix + (b * oh + i) * ow + j].clone()
    }))
}
