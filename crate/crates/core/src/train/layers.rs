//! Standard layers with manual backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::{im2row_lower, out_extent, row2im, Mat, Tensor4};
use crate::quant::{apply_mask, Mode, QNode, QSpec};
use crate::train::linalg::{matmul, matmul_acc, transpose};
use crate::train::{Param, ParamKind};

/// Quantization points of a lowered (im2row) convolution or a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearNodes {
    pub input: QNode,
    pub weight: QNode,
    pub output: QNode,
}

impl LinearNodes {
    pub fn new(momentum: f64) -> Self {
        Self {
            input: QNode::activation(momentum),
            weight: QNode::weight(momentum),
            output: QNode::activation(momentum),
        }
    }
}

/// Convolution computed through im2row and one GEMM; numerically the direct
/// algorithm up to summation order.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub qspec: QSpec,
    pub nodes: LinearNodes,
}

#[derive(Debug, Clone)]
pub struct ConvContext {
    x_dims: [usize; 4],
    rows: Mat,
    wq: Vec<f64>,
    out_hw: (usize, usize),
    mask_in: Option<Vec<bool>>,
    mask_w: Option<Vec<bool>>,
    mask_out: Option<Vec<bool>>,
}

impl ConvLayer {
    pub fn new(name: &str, weights: Tensor4, stride: usize, pad: usize, qspec: QSpec) -> Result<Self> {
        let [o, c, kh, kw] = weights.dims();
        if kh != kw {
            return shape_err("square kernels only");
        }
        Ok(Self {
            in_ch: c,
            out_ch: o,
            k: kh,
            stride,
            pad,
            weight: Param::new(format!("{name}.weight"), ParamKind::Weight, vec![o, c, kh, kw], weights.into_data()),
            qspec,
            nodes: LinearNodes::new(qspec.momentum),
        })
    }

    pub fn weights(&self) -> Tensor4 {
        Tensor4::new([self.out_ch, self.in_ch, self.k, self.k], self.weight.value.clone()).expect("weight shape")
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (out_extent(h, self.k, self.stride, self.pad), out_extent(w, self.k, self.stride, self.pad)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => shape_err(format!("{h}x{w} input has no integral output for k={} s={} p={}", self.k, self.stride, self.pad)),
        }
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, ConvContext)> {
        if x.c() != self.in_ch {
            return shape_err(format!("layer expects {} channels, got {}", self.in_ch, x.c()));
        }
        let spec = self.qspec;
        let mut xq = x.clone();
        let mask_in = self.nodes.input.apply_masked(xq.data_mut(), &spec, mode);
        let mut wq = self.weight.value.clone();
        let mask_w = self.nodes.weight.apply_masked(&mut wq, &spec, mode);
        let (oh, ow) = self.out_hw(x.h(), x.w())?;
        let rows = im2row_lower(&xq, self.k, self.k, self.stride, self.pad)?;
        let ckk = self.in_ch * self.k * self.k;
        let npix = x.n() * oh * ow;
        // (npix × ckk) · (ckk × out)
        let prod = matmul(rows.data(), &transpose(&wq, self.out_ch, ckk), npix, ckk, self.out_ch);
        let oc = self.out_ch;
        let mut y = Tensor4::from_fn([x.n(), oc, oh, ow], |[b, o, i, j]| prod[((b * oh + i) * ow + j) * oc + o]);
        let mask_out = self.nodes.output.apply_masked(y.data_mut(), &spec, mode);
        Ok((
            y,
            ConvContext {
                x_dims: x.dims(),
                rows,
                wq,
                out_hw: (oh, ow),
                mask_in,
                mask_w,
                mask_out,
            },
        ))
    }

    pub fn backward(&mut self, ctx: &ConvContext, grad_y: &Tensor4) -> Result<Tensor4> {
        let (oh, ow) = ctx.out_hw;
        let n = ctx.x_dims[0];
        let oc = self.out_ch;
        let ckk = self.in_ch * self.k * self.k;
        let npix = n * oh * ow;
        let mut gy = grad_y.data().to_vec();
        apply_mask(&mut gy, &ctx.mask_out);
        // to (npix × out)
        let mut gmat = vec![0.0; npix * oc];
        for b in 0..n {
            for o in 0..oc {
                for p in 0..oh * ow {
                    gmat[(b * oh * ow + p) * oc + o] = gy[(b * oc + o) * oh * ow + p];
                }
            }
        }
        // dW = gᵀ · rows : (out × npix)(npix × ckk)
        let mut dw = matmul(&transpose(&gmat, npix, oc), ctx.rows.data(), oc, npix, ckk);
        apply_mask(&mut dw, &ctx.mask_w);
        self.weight.grad.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        // drows = g · W : (npix × out)(out × ckk)
        let drows = Mat::new(npix, ckk, matmul(&gmat, &ctx.wq, npix, oc, ckk))?;
        let mut dx = row2im(&drows, ctx.x_dims, self.k, self.k, self.stride, self.pad)?;
        apply_mask(dx.data_mut(), &ctx.mask_in);
        Ok(dx)
    }
}

/// Per-channel batch normalization; batch statistics in training, running
/// statistics otherwise.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnContext {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
    dims: [usize; 4],
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), ParamKind::Norm, vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), ParamKind::Norm, vec![channels], vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, BnContext)> {
        let [n, c, h, w] = x.dims();
        if c != self.channels {
            return shape_err(format!("batch norm over {} channels got {c}", self.channels));
        }
        let hw = h * w;
        let count = (n * hw) as f64;
        let batch_stats = mode == Mode::Train;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if batch_stats {
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    s += x.plane(b, ch).iter().sum::<f64>();
                }
                let mu = s / count;
                let mut v = 0.0;
                for b in 0..n {
                    v += x.plane(b, ch).iter().map(|t| (t - mu) * (t - mu)).sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = v / count;
                let unbiased = if count > 1.0 { var[ch] * count / (count - 1.0) } else { var[ch] };
                self.running_mean[ch] = self.momentum * self.running_mean[ch] + (1.0 - self.momentum) * mu;
                self.running_var[ch] = self.momentum * self.running_var[ch] + (1.0 - self.momentum) * unbiased;
            }
        } else {
            mean.copy_from_slice(&self.running_mean);
            var.copy_from_slice(&self.running_var);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in 0..hw {
                    let xh = (x.data()[off + i] - mean[ch]) * inv_std[ch];
                    xhat[off + i] = xh;
                    y[off + i] = self.gamma.value[ch] * xh + self.beta.value[ch];
                }
            }
        }
        Ok((
            Tensor4::new(x.dims(), y)?,
            BnContext {
                xhat,
                inv_std,
                batch_stats,
                dims: x.dims(),
            },
        ))
    }

    pub fn backward(&mut self, ctx: &BnContext, grad_y: &Tensor4) -> Result<Tensor4> {
        let [n, c, h, w] = ctx.dims;
        let hw = h * w;
        let count = (n * hw) as f64;
        let gy = grad_y.data();
        let mut dx = vec![0.0; gy.len()];
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for i in 0..hw {
                    sum_g += gy[off + i];
                    sum_gx += gy[off + i] * ctx.xhat[off + i];
                }
            }
            self.beta.grad[ch] += sum_g;
            self.gamma.grad[ch] += sum_gx;
            let k = self.gamma.value[ch] * ctx.inv_std[ch];
            for b in 0..n {
                let off = (b * c + ch) * hw;
                for i in 0..hw {
                    dx[off + i] = if ctx.batch_stats {
                        k * (gy[off + i] - sum_g / count - ctx.xhat[off + i] * sum_gx / count)
                    } else {
                        k * gy[off + i]
                    };
                }
            }
        }
        Tensor4::new(ctx.dims, dx)
    }
}

/// Fully connected layer over the flattened `C·H·W` features; output is
/// `[N, out, 1, 1]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param,
    pub bias: Param,
    pub qspec: QSpec,
    pub nodes: LinearNodes,
}

#[derive(Debug, Clone)]
pub struct LinearContext {
    xq: Vec<f64>,
    wq: Vec<f64>,
    dims: [usize; 4],
    mask_in: Option<Vec<bool>>,
    mask_w: Option<Vec<bool>>,
}

impl Linear {
    pub fn new(name: &str, weight: Vec<f64>, in_features: usize, out_features: usize, qspec: QSpec) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::new(format!("{name}.weight"), ParamKind::Weight, vec![out_features, in_features], weight),
            bias: Param::new(format!("{name}.bias"), ParamKind::Bias, vec![out_features], vec![0.0; out_features]),
            qspec,
            nodes: LinearNodes::new(qspec.momentum),
        }
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, LinearContext)> {
        let n = x.n();
        let feat = x.len() / n;
        if feat != self.in_features {
            return shape_err(format!("linear layer expects {} features, got {feat}", self.in_features));
        }
        let spec = self.qspec;
        let mut xq = x.data().to_vec();
        let mask_in = self.nodes.input.apply_masked(&mut xq, &spec, mode);
        let mut wq = self.weight.value.clone();
        let mask_w = self.nodes.weight.apply_masked(&mut wq, &spec, mode);
        let mut y = matmul(&xq, &transpose(&wq, self.out_features, feat), n, feat, self.out_features);
        for row in y.chunks_mut(self.out_features) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v += b);
        }
        Ok((
            Tensor4::new([n, self.out_features, 1, 1], y)?,
            LinearContext {
                xq,
                wq,
                dims: x.dims(),
                mask_in,
                mask_w,
            },
        ))
    }

    pub fn backward(&mut self, ctx: &LinearContext, grad_y: &Tensor4) -> Result<Tensor4> {
        let n = ctx.dims[0];
        let (fi, fo) = (self.in_features, self.out_features);
        let gy = grad_y.data();
        for row in gy.chunks(fo) {
            self.bias.grad.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let mut dw = matmul(&transpose(gy, n, fo), &ctx.xq, fo, n, fi);
        apply_mask(&mut dw, &ctx.mask_w);
        self.weight.grad.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        let mut dx = vec![0.0; n * fi];
        matmul_acc(gy, &ctx.wq, &mut dx, n, fo, fi);
        apply_mask(&mut dx, &ctx.mask_in);
        Tensor4::new(ctx.dims, dx)
    }
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor4, grad_y: &Tensor4) -> Tensor4 {
    let data = x.data().iter().zip(grad_y.data()).map(|(v, g)| if *v > 0.0 { *g } else { 0.0 }).collect();
    Tensor4::new(x.dims(), data).expect("same dims")
}

pub fn global_avg_pool(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let hw = (h * w) as f64;
    Tensor4::from_fn([n, c, 1, 1], |[b, ch, _, _]| x.plane(b, ch).iter().sum::<f64>() / hw)
}

pub fn global_avg_pool_backward(dims: [usize; 4], grad_y: &Tensor4) -> Tensor4 {
    let hw = (dims[2] * dims[3]) as f64;
    Tensor4::from_fn(dims, |[b, c, _, _]| grad_y.data()[b * dims[1] + c] / hw)
}
