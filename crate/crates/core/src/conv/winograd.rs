use rayon::prelude::*;

use crate::conv::ConvShape;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{rat, sandwich_into, Precision, Rational, Scalar, Tensor4};
use crate::quant::{QParams, QSpec};
use crate::transforms::WinogradTransform;

/// Tiling of a padded input into overlapping `(m+r-1)²` tiles with stride `m`.
///
/// The valid output extent is rounded up to a multiple of `m`; the input is
/// zero-extended to cover the last tile and surplus outputs are trimmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub m: usize,
    pub r: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub tiles_h: usize,
    pub tiles_w: usize,
}

impl TileGrid {
    pub fn new(in_h: usize, in_w: usize, pad: usize, m: usize, r: usize) -> Result<Self> {
        if in_h + 2 * pad < r || in_w + 2 * pad < r || m == 0 {
            return shape_err(format!(
                "{in_h}x{in_w} input with pad {pad} too small for F({m}, {r})"
            ));
        }
        let out_h = in_h + 2 * pad - r + 1;
        let out_w = in_w + 2 * pad - r + 1;
        Ok(Self {
            m,
            r,
            pad,
            in_h,
            in_w,
            out_h,
            out_w,
            tiles_h: out_h.div_ceil(m),
            tiles_w: out_w.div_ceil(m),
        })
    }

    #[inline]
    pub fn tile(&self) -> usize {
        self.m + self.r - 1
    }

    #[inline]
    pub fn tiles(&self) -> usize {
        self.tiles_h * self.tiles_w
    }

    /// Copies tile `t` of `plane` (an `in_h × in_w` image) into `out`
    /// (`n × n`), with zeros outside the image.
    pub fn extract<S: Scalar>(&self, plane: &[S], t: usize, out: &mut [S]) {
        let n = self.tile();
        let (ti, tj) = (t / self.tiles_w, t % self.tiles_w);
        let y0 = (ti * self.m) as isize - self.pad as isize;
        let x0 = (tj * self.m) as isize - self.pad as isize;
        for a in 0..n {
            let y = y0 + a as isize;
            let row = &mut out[a * n..(a + 1) * n];
            if y < 0 || y >= self.in_h as isize {
                row.iter_mut().for_each(|v| *v = S::zero());
                continue;
            }
            for (b, slot) in row.iter_mut().enumerate() {
                let x = x0 + b as isize;
                *slot = if x < 0 || x >= self.in_w as isize {
                    S::zero()
                } else {
                    plane[y as usize * self.in_w + x as usize].clone()
                };
            }
        }
    }

    /// Adjoint of [`TileGrid::extract`]: adds `tile` into `plane`, dropping
    /// entries that fall in the padding.
    pub fn scatter_add(&self, tile: &[f64], t: usize, plane: &mut [f64]) {
        let n = self.tile();
        let (ti, tj) = (t / self.tiles_w, t % self.tiles_w);
        let y0 = (ti * self.m) as isize - self.pad as isize;
        let x0 = (tj * self.m) as isize - self.pad as isize;
        for a in 0..n {
            let y = y0 + a as isize;
            if y < 0 || y >= self.in_h as isize {
                continue;
            }
            for b in 0..n {
                let x = x0 + b as isize;
                if x < 0 || x >= self.in_w as isize {
                    continue;
                }
                plane[y as usize * self.in_w + x as usize] += tile[a * n + b];
            }
        }
    }

    /// Writes the `m × m` output block of tile `t` into `plane`
    /// (`out_h × out_w`), trimming rows and columns past the valid extent.
    pub fn place<S: Scalar>(&self, block: &[S], t: usize, plane: &mut [S]) {
        let (ti, tj) = (t / self.tiles_w, t % self.tiles_w);
        for a in 0..self.m {
            let y = ti * self.m + a;
            if y >= self.out_h {
                break;
            }
            for b in 0..self.m {
                let x = tj * self.m + b;
                if x >= self.out_w {
                    break;
                }
                plane[y * self.out_w + x] = block[a * self.m + b].clone();
            }
        }
    }

    /// Adjoint of [`TileGrid::place`]: gathers the gradient block of tile
    /// `t`, zero where the block was trimmed.
    pub fn gather(&self, plane: &[f64], t: usize, block: &mut [f64]) {
        let (ti, tj) = (t / self.tiles_w, t % self.tiles_w);
        for a in 0..self.m {
            for b in 0..self.m {
                let (y, x) = (ti * self.m + a, tj * self.m + b);
                block[a * self.m + b] = if y < self.out_h && x < self.out_w {
                    plane[y * self.out_w + x]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Winograd-domain filters `U = G g Gᵀ`, laid out `[out_ch][in_ch][n·n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WinogradWeights<S = f64> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub tile: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> WinogradWeights<S> {
    /// Storage growth over the spatial filters: `(m+r-1)² / r²`.
    pub fn memory_ratio(&self, r: usize) -> Rational {
        rat((self.tile * self.tile) as i64, (r * r) as i64)
    }
}

pub fn filter_transform<S: Scalar>(w: &Tensor4<S>, tf: &WinogradTransform<S>) -> Result<WinogradWeights<S>> {
    tf.validate()?;
    let [o, c, kh, kw] = w.dims();
    if kh != tf.r || kw != tf.r {
        return shape_err(format!(
            "filters are {kh}x{kw} but the transform expects {r}x{r}",
            r = tf.r
        ));
    }
    let n = tf.tile();
    let nn = n * n;
    let mut data = vec![S::zero(); o * c * nn];
    data.par_chunks_mut(nn)
        .zip(w.data().par_chunks(kh * kw))
        .for_each_init(
            || vec![S::zero(); n * tf.r],
            |scratch, (u, g)| sandwich_into(tf.g.data(), n, tf.r, g, scratch, u),
        );
    Ok(WinogradWeights {
        out_ch: o,
        in_ch: c,
        tile: n,
        data,
    })
}

/// `V = Bᵀ d B` for every batch item, tile and channel, laid out
/// `[batch][tile][in_ch][n·n]`.
pub fn input_transform<S: Scalar>(x: &Tensor4<S>, bt: &[S], grid: &TileGrid) -> Vec<S> {
    let n = grid.tile();
    let nn = n * n;
    let (c, tiles) = (x.c(), grid.tiles());
    let mut v = vec![S::zero(); x.n() * tiles * c * nn];
    v.par_chunks_mut(tiles * c * nn)
        .enumerate()
        .for_each(|(b, item)| {
            let mut d = vec![S::zero(); nn];
            let mut scratch = vec![S::zero(); nn];
            for t in 0..tiles {
                for ch in 0..c {
                    grid.extract(x.plane(b, ch), t, &mut d);
                    let off = (t * c + ch) * nn;
                    sandwich_into(bt, n, n, &d, &mut scratch, &mut item[off..off + nn]);
                }
            }
        });
    v
}

/// `M[b,t,o] = Σ_c U[o,c] ⊙ V[b,t,c]`, laid out `[batch][tile][out_ch][n·n]`.
pub fn hadamard_accumulate<S: Scalar>(u: &WinogradWeights<S>, v: &[S], batch: usize, tiles: usize) -> Vec<S> {
    let nn = u.tile * u.tile;
    let (c, o) = (u.in_ch, u.out_ch);
    let mut out = vec![S::zero(); batch * tiles * o * nn];
    out.par_chunks_mut(o * nn)
        .zip(v.par_chunks(c * nn))
        .for_each(|(mt, vt)| {
            for oc in 0..o {
                let acc = &mut mt[oc * nn..(oc + 1) * nn];
                for ch in 0..c {
                    let uf = &u.data[(oc * c + ch) * nn..(oc * c + ch + 1) * nn];
                    let vf = &vt[ch * nn..(ch + 1) * nn];
                    for ((a, x), y) in acc.iter_mut().zip(uf).zip(vf) {
                        *a = a.clone() + x.clone() * y.clone();
                    }
                }
            }
        });
    out
}

/// `Y = Aᵀ M A` per tile and output channel, assembled into NCHW and trimmed.
pub fn output_transform<S: Scalar>(mm: &[S], at: &[S], grid: &TileGrid, batch: usize, out_ch: usize) -> Result<Tensor4<S>> {
    let (m, n) = (grid.m, grid.tile());
    let nn = n * n;
    let tiles = grid.tiles();
    let plane = grid.out_h * grid.out_w;
    let mut y = vec![S::zero(); batch * out_ch * plane];
    y.par_chunks_mut(out_ch * plane)
        .enumerate()
        .for_each(|(b, item)| {
            let mut block = vec![S::zero(); m * m];
            let mut scratch = vec![S::zero(); m * n];
            for t in 0..tiles {
                for o in 0..out_ch {
                    let off = ((b * tiles + t) * out_ch + o) * nn;
                    sandwich_into(at, m, n, &mm[off..off + nn], &mut scratch, &mut block);
                    grid.place(&block, t, &mut item[o * plane..(o + 1) * plane]);
                }
            }
        });
    Tensor4::new([batch, out_ch, grid.out_h, grid.out_w], y)
}

/// Fake-quantizes a stage buffer with a per-tensor range taken from the
/// buffer itself; float specs apply storage rounding only.
pub fn quantize_stage<S: Scalar>(buf: &mut [S], qspec: &QSpec, precision: Precision) {
    match qspec.qmax() {
        None => buf.iter_mut().for_each(|v| v.round_storage(precision)),
        Some(qmax) => {
            let max = buf.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max);
            let qp = QParams::from_max_abs(max, qmax);
            buf.iter_mut()
                .for_each(|v| *v = S::from_f64(qp.quantize(v.as_f64())));
        }
    }
}

/// Tiled Winograd convolution.
pub fn conv2d_winograd<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    tf: &WinogradTransform<S>,
    shape: &ConvShape,
    qspec: &QSpec,
) -> Result<Tensor4<S>> {
    conv2d_winograd_with(x, w, tf, shape, qspec, Precision::F64)
}

/// [`conv2d_winograd`] with an explicit storage precision for float stages.
pub fn conv2d_winograd_with<S: Scalar>(
    x: &Tensor4<S>,
    w: &Tensor4<S>,
    tf: &WinogradTransform<S>,
    shape: &ConvShape,
    qspec: &QSpec,
    precision: Precision,
) -> Result<Tensor4<S>> {
    if shape.stride != 1 {
        return Err(Error::UnsupportedAlgo(format!(
            "Winograd F{} needs stride 1, got {}",
            tf.m, shape.stride
        )));
    }
    if shape.k != tf.r {
        return shape_err(format!("kernel {} does not match transform r={}", shape.k, tf.r));
    }
    shape.check_operands(x, w)?;
    let grid = TileGrid::new(shape.in_h, shape.in_w, shape.pad, tf.m, tf.r)?;

    let mut xq = x.clone();
    quantize_stage(xq.data_mut(), qspec, precision);
    let mut wq = w.clone();
    quantize_stage(wq.data_mut(), qspec, precision);

    let mut u = filter_transform(&wq, tf)?;
    quantize_stage(&mut u.data, qspec, precision);
    let mut v = input_transform(&xq, tf.bt.data(), &grid);
    quantize_stage(&mut v, qspec, precision);
    let mut mm = hadamard_accumulate(&u, &v, x.n(), grid.tiles());
    quantize_stage(&mut mm, qspec, precision);
    let mut y = output_transform(&mm, tf.at.data(), &grid, x.n(), shape.out_ch)?;
    quantize_stage(y.data_mut(), qspec, precision);
    Ok(y)
}
