//! Winograd-aware convolution layer: the tiled Winograd pipeline with a
//! quantization node after every stage, and its analytic backward pass
//! including gradients for the transformation matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv::{filter_transform, hadamard_accumulate, input_transform, output_transform, TileGrid, WinogradWeights};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{sandwich_into, Mat, Tensor4};
use crate::quant::{apply_mask, Mode, QNode, QSpec};
use crate::train::linalg::{sandwich_grad_t, transpose};
use crate::train::{Param, ParamKind};
use crate::transforms::{PolyPoints, WinogradTransform};

/// The six quantization points of a Winograd-aware layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaNodes {
    pub input: QNode,
    pub weight: QNode,
    pub u: QNode,
    pub v: QNode,
    pub hadamard: QNode,
    pub output: QNode,
}

impl WaNodes {
    pub fn new(momentum: f64) -> Self {
        Self {
            input: QNode::activation(momentum),
            weight: QNode::weight(momentum),
            u: QNode::activation(momentum),
            v: QNode::activation(momentum),
            hadamard: QNode::activation(momentum),
            output: QNode::activation(momentum),
        }
    }

    pub fn as_array(&self) -> [QNode; 6] {
        [self.input, self.weight, self.u, self.v, self.hadamard, self.output]
    }
}

#[derive(Debug, Clone)]
pub struct WaLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub m: usize,
    pub r: usize,
    pub pad: usize,
    pub weight: Param,
    pub g: Param,
    pub bt: Param,
    pub at: Param,
    pub points: PolyPoints,
    pub learnable_tf: bool,
    pub qspec: QSpec,
    pub nodes: WaNodes,
    generation: u64,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct WaContext {
    generation: u64,
    x_dims: [usize; 4],
    grid: TileGrid,
    xq: Tensor4,
    gq: Vec<f64>,
    uq: WinogradWeights,
    vq: Vec<f64>,
    mq: Vec<f64>,
    mask_in: Option<Vec<bool>>,
    mask_w: Option<Vec<bool>>,
    mask_u: Option<Vec<bool>>,
    mask_v: Option<Vec<bool>>,
    mask_m: Option<Vec<bool>>,
    mask_out: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct WaGrads {
    pub d_input: Tensor4,
    pub d_weights: Vec<f64>,
    pub d_g: Vec<f64>,
    pub d_bt: Vec<f64>,
    pub d_at: Vec<f64>,
}

impl WaLayer {
    /// Builds a layer from filters `(out_ch, in_ch, r, r)` and a transform.
    pub fn new(
        name: &str,
        weights: Tensor4,
        tf: &WinogradTransform<f64>,
        pad: usize,
        learnable_tf: bool,
        qspec: QSpec,
    ) -> Result<Self> {
        tf.validate()?;
        let [o, c, kh, kw] = weights.dims();
        if kh != tf.r || kw != tf.r {
            return shape_err(format!("{kh}x{kw} filters with an r={} transform", tf.r));
        }
        let n = tf.tile();
        let tparam = |suffix: &str, mat: &Mat<f64>| {
            let p = Param::new(
                format!("{name}.{suffix}"),
                ParamKind::Transform,
                vec![mat.rows(), mat.cols()],
                mat.data().to_vec(),
            );
            if learnable_tf {
                p
            } else {
                p.frozen()
            }
        };
        debug_assert_eq!(tf.g.rows(), n);
        Ok(Self {
            in_ch: c,
            out_ch: o,
            m: tf.m,
            r: tf.r,
            pad,
            weight: Param::new(format!("{name}.weight"), ParamKind::Weight, vec![o, c, kh, kw], weights.into_data()),
            g: tparam("G", &tf.g),
            bt: tparam("Bt", &tf.bt),
            at: tparam("At", &tf.at),
            points: tf.points.clone(),
            learnable_tf,
            qspec,
            nodes: WaNodes::new(qspec.momentum),
            generation: 0,
        })
    }

    pub fn tile(&self) -> usize {
        self.m + self.r - 1
    }

    /// Current transform triple (trained values when learnable).
    pub fn transform(&self) -> WinogradTransform<f64> {
        let n = self.tile();
        WinogradTransform {
            m: self.m,
            r: self.r,
            g: Mat::new(n, self.r, self.g.value.clone()).expect("G shape"),
            bt: Mat::new(n, n, self.bt.value.clone()).expect("Bt shape"),
            at: Mat::new(self.m, n, self.at.value.clone()).expect("At shape"),
            points: self.points.clone(),
            learnable: self.learnable_tf,
        }
    }

    pub fn weights(&self) -> Tensor4 {
        Tensor4::new([self.out_ch, self.in_ch, self.r, self.r], self.weight.value.clone()).expect("weight shape")
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.g, &self.bt, &self.at]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.g, &mut self.bt, &mut self.at]
    }

    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let g = TileGrid::new(h, w, self.pad, self.m, self.r)?;
        Ok((g.out_h, g.out_w))
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, WaContext)> {
        if x.c() != self.in_ch {
            return shape_err(format!("layer expects {} channels, got {}", self.in_ch, x.c()));
        }
        let grid = TileGrid::new(x.h(), x.w(), self.pad, self.m, self.r)?;
        let tf = self.transform();
        let spec = self.qspec;
        let batch = x.n();

        let mut xq = x.clone();
        let mask_in = self.nodes.input.apply_masked(xq.data_mut(), &spec, mode);
        let mut gq = self.weight.value.clone();
        let mask_w = self.nodes.weight.apply_masked(&mut gq, &spec, mode);
        let wq = Tensor4::new([self.out_ch, self.in_ch, self.r, self.r], gq.clone())?;

        let mut uq = filter_transform(&wq, &tf)?;
        let mask_u = self.nodes.u.apply_masked(&mut uq.data, &spec, mode);
        let mut vq = input_transform(&xq, tf.bt.data(), &grid);
        let mask_v = self.nodes.v.apply_masked(&mut vq, &spec, mode);
        let mut mq = hadamard_accumulate(&uq, &vq, batch, grid.tiles());
        let mask_m = self.nodes.hadamard.apply_masked(&mut mq, &spec, mode);
        let mut y = output_transform(&mq, tf.at.data(), &grid, batch, self.out_ch)?;
        let mask_out = self.nodes.output.apply_masked(y.data_mut(), &spec, mode);

        self.generation += 1;
        let ctx = WaContext {
            generation: self.generation,
            x_dims: x.dims(),
            grid,
            xq,
            gq,
            uq,
            vq,
            mq,
            mask_in,
            mask_w,
            mask_u,
            mask_v,
            mask_m,
            mask_out,
        };
        Ok((y, ctx))
    }

    /// Gradients of a scalar loss given `dL/dy`. Transform gradients are
    /// zero when the transforms are frozen.
    pub fn backward(&self, ctx: &WaContext, grad_y: &Tensor4) -> Result<WaGrads> {
        if ctx.generation != self.generation {
            return Err(Error::State(format!(
                "backward context from forward #{} but layer is at #{}",
                ctx.generation, self.generation
            )));
        }
        let grid = ctx.grid;
        let [batch, _, _, _] = ctx.x_dims;
        if grad_y.dims() != [batch, self.out_ch, grid.out_h, grid.out_w] {
            return shape_err(format!("output gradient {:?} does not match the forward pass", grad_y.dims()));
        }
        let (m, r, n) = (self.m, self.r, self.tile());
        let nn = n * n;
        let (c_in, c_out) = (self.in_ch, self.out_ch);
        let tiles = grid.tiles();
        let learn = self.learnable_tf;
        let g_mat = &self.g.value;
        let bt = &self.bt.value;
        let at = &self.at.value;
        let at_t = transpose(at, m, n);
        let bt_t = transpose(bt, n, n);
        let g_t = transpose(g_mat, n, r);
        let plane_in = grid.in_h * grid.in_w;
        let plane_out = grid.out_h * grid.out_w;

        let mut dy = grad_y.data().to_vec();
        apply_mask(&mut dy, &ctx.mask_out);

        struct ItemGrads {
            dx: Vec<f64>,
            du: Vec<f64>,
            dat: Vec<f64>,
            dbt: Vec<f64>,
        }

        let items: Vec<ItemGrads> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let mut dat = vec![0.0; if learn { m * n } else { 0 }];
                let mut dbt = vec![0.0; if learn { nn } else { 0 }];
                let mut du = vec![0.0; c_out * c_in * nn];
                let mut dx = vec![0.0; c_in * plane_in];
                let mut block = vec![0.0; m * m];
                let mut scratch = vec![0.0; nn];
                let mut dm = vec![0.0; c_out * nn];
                let mut dv = vec![0.0; c_in * nn];
                let mut dd = vec![0.0; nn];
                let mut d = vec![0.0; nn];
                for t in 0..tiles {
                    // output transform: dM = A dY Aᵀ
                    for o in 0..c_out {
                        let plane = &dy[(b * c_out + o) * plane_out..(b * c_out + o + 1) * plane_out];
                        grid.gather(plane, t, &mut block);
                        let mq_off = ((b * tiles + t) * c_out + o) * nn;
                        let dmo = &mut dm[o * nn..(o + 1) * nn];
                        sandwich_into(&at_t, n, m, &block, &mut scratch, dmo);
                        if learn {
                            sandwich_grad_t(at, &ctx.mq[mq_off..mq_off + nn], &block, m, n, &mut dat);
                        }
                        if let Some(mask) = &ctx.mask_m {
                            for (g, keep) in dmo.iter_mut().zip(&mask[mq_off..mq_off + nn]) {
                                if !keep {
                                    *g = 0.0;
                                }
                            }
                        }
                    }
                    // Hadamard stage
                    let v_off = (b * tiles + t) * c_in * nn;
                    let vt = &ctx.vq[v_off..v_off + c_in * nn];
                    dv.iter_mut().for_each(|v| *v = 0.0);
                    for o in 0..c_out {
                        let dmo = &dm[o * nn..(o + 1) * nn];
                        for c in 0..c_in {
                            let uo = &ctx.uq.data[(o * c_in + c) * nn..(o * c_in + c + 1) * nn];
                            let vc = &vt[c * nn..(c + 1) * nn];
                            let duo = &mut du[(o * c_in + c) * nn..(o * c_in + c + 1) * nn];
                            for e in 0..nn {
                                duo[e] += dmo[e] * vc[e];
                            }
                            let dvc = &mut dv[c * nn..(c + 1) * nn];
                            for e in 0..nn {
                                dvc[e] += dmo[e] * uo[e];
                            }
                        }
                    }
                    if let Some(mask) = &ctx.mask_v {
                        for (g, keep) in dv.iter_mut().zip(&mask[v_off..v_off + c_in * nn]) {
                            if !keep {
                                *g = 0.0;
                            }
                        }
                    }
                    // input transform: dd = Bᵀᵀ dV Bᵀ
                    for c in 0..c_in {
                        let dvc = &dv[c * nn..(c + 1) * nn];
                        sandwich_into(&bt_t, n, n, dvc, &mut scratch, &mut dd);
                        grid.scatter_add(&dd, t, &mut dx[c * plane_in..(c + 1) * plane_in]);
                        if learn {
                            grid.extract(ctx.xq.plane(b, c), t, &mut d);
                            sandwich_grad_t(bt, &d, dvc, n, n, &mut dbt);
                        }
                    }
                }
                ItemGrads { dx, du, dat, dbt }
            })
            .collect();

        // fixed-order reduction over batch items
        let mut du = vec![0.0; c_out * c_in * nn];
        let mut d_at = vec![0.0; m * n];
        let mut d_bt = vec![0.0; nn];
        let mut dx = Vec::with_capacity(batch * c_in * plane_in);
        for it in &items {
            du.iter_mut().zip(&it.du).for_each(|(a, b)| *a += b);
            if learn {
                d_at.iter_mut().zip(&it.dat).for_each(|(a, b)| *a += b);
                d_bt.iter_mut().zip(&it.dbt).for_each(|(a, b)| *a += b);
            }
            dx.extend_from_slice(&it.dx);
        }
        apply_mask(&mut dx, &ctx.mask_in);
        apply_mask(&mut du, &ctx.mask_u);

        // filter transform: dg = Gᵀ dU G
        let mut d_w = vec![0.0; c_out * c_in * r * r];
        let mut d_g = vec![0.0; n * r];
        let mut scratch = vec![0.0; r * n];
        for (f, dwf) in d_w.chunks_mut(r * r).enumerate() {
            let duf = &du[f * nn..(f + 1) * nn];
            sandwich_into(&g_t, r, n, duf, &mut scratch, dwf);
            if learn {
                sandwich_grad_t(g_mat, &ctx.gq[f * r * r..(f + 1) * r * r], duf, n, r, &mut d_g);
            }
        }
        apply_mask(&mut d_w, &ctx.mask_w);

        Ok(WaGrads {
            d_input: Tensor4::new(ctx.x_dims, dx)?,
            d_weights: d_w,
            d_g,
            d_bt,
            d_at,
        })
    }

    /// Backward that also accumulates into the layer's parameter gradients.
    pub fn backward_accumulate(&mut self, ctx: &WaContext, grad_y: &Tensor4) -> Result<Tensor4> {
        let g = self.backward(ctx, grad_y)?;
        self.weight.grad.iter_mut().zip(&g.d_weights).for_each(|(a, b)| *a += b);
        if self.learnable_tf {
            self.g.grad.iter_mut().zip(&g.d_g).for_each(|(a, b)| *a += b);
            self.bt.grad.iter_mut().zip(&g.d_bt).for_each(|(a, b)| *a += b);
            self.at.grad.iter_mut().zip(&g.d_at).for_each(|(a, b)| *a += b);
        }
        Ok(g.d_input)
    }
}
