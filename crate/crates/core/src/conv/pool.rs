use crate::conv::{conv2d, ConvAlgo, ConvShape};
use crate::error::{shape_err, Result};
use crate::numerics::Tensor4;
use crate::quant::QSpec;

/// 2×2 max pooling with stride 2. Also returns, per output, the flat index of
/// the selected input (first maximum in row-major window order).
pub fn maxpool2x2(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let [n, c, h, w] = x.dims();
    if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("2x2 max pool needs even spatial dims, got {h}x{w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = x.index(b, ch, 2 * i, 2 * j);
                    for (u, v) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = x.index(b, ch, 2 * i + u, 2 * j + v);
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                    out.push(x.data()[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((Tensor4::new([n, c, oh, ow], out)?, argmax))
}

pub fn maxpool2x2_backward(grad: &Tensor4, argmax: &[usize], in_dims: [usize; 4]) -> Tensor4 {
    let mut g = Tensor4::zeros(in_dims);
    for (gv, &idx) in grad.data().iter().zip(argmax) {
        g.data_mut()[idx] += gv;
    }
    g
}

/// Replacement for a stride-2 convolution: 2×2 max pool, then the same
/// convolution at stride 1 with any algorithm.
pub fn conv2d_maxpool_stride_replace(
    x: &Tensor4,
    w: &Tensor4,
    shape: &ConvShape,
    algo: ConvAlgo,
    qspec: &QSpec,
) -> Result<Tensor4> {
    if shape.stride != 2 {
        return shape_err(format!("stride replacement applies to stride 2, got {}", shape.stride));
    }
    let (pooled, _) = maxpool2x2(x)?;
    let inner = ConvShape::new(
        shape.in_ch,
        shape.out_ch,
        pooled.h(),
        pooled.w(),
        shape.k,
        1,
        shape.pad,
    )?;
    conv2d(&pooled, w, &inner, algo, qspec)
}
