use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conv::{maxpool2x2, maxpool2x2_backward, ConvAlgo};
use crate::error::{shape_err, Error, Result};
use crate::nas::{MixedContext, MixedOp};
use crate::numerics::Tensor4;
use crate::quant::{Mode, QSpec};
use crate::train::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_forward, BatchNorm, BnContext, ConvContext,
    ConvLayer, Linear, LinearContext,
};
use crate::train::wa::{WaContext, WaLayer};
use crate::train::Param;
use crate::transforms::default_transform;

/// Serializable description of a convolution layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    #[serde(default = "one")]
    pub stride: usize,
    pub pad: usize,
    pub algo: ConvAlgo,
    pub bits: QSpec,
    /// Learnable Winograd transforms.
    #[serde(default)]
    pub flex: bool,
    /// Input layers keep their algorithm when a model is re-targeted.
    #[serde(default)]
    pub fixed: bool,
    /// Re-targeting to any Winograd tile maps this layer to F2.
    #[serde(default)]
    pub pin_f2: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvSpec),
    BatchNorm { name: String, channels: usize },
    Relu,
    MaxPool,
    GlobalAvgPool,
    Linear { name: String, in_features: usize, out_features: usize, bits: QSpec },
    /// Pushes the current activation for a later [`LayerSpec::AddSkip`].
    SaveSkip,
    AddSkip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// `[channels, height, width]` of one input image.
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn conv_specs(&self) -> impl Iterator<Item = &ConvSpec> {
        self.layers.iter().filter_map(|l| match l {
            LayerSpec::Conv(c) => Some(c),
            _ => None,
        })
    }

    /// Re-targets every non-fixed convolution to `algo` (pinned layers go to
    /// F2 when `algo` is Winograd) with the given bits and flex flag.
    pub fn retarget(&self, algo: ConvAlgo, bits: QSpec, flex: bool) -> ModelSpec {
        let mut out = self.clone();
        for layer in &mut out.layers {
            match layer {
                LayerSpec::Conv(c) => {
                    c.bits = bits;
                    if c.fixed {
                        continue;
                    }
                    c.algo = match algo {
                        ConvAlgo::Winograd(_) if c.pin_f2 => ConvAlgo::Winograd(2),
                        a => a,
                    };
                    c.flex = flex && c.algo.is_winograd();
                }
                LayerSpec::Linear { bits: b, .. } => *b = bits,
                _ => {}
            }
        }
        out
    }

    pub fn with_bits(&self, bits: QSpec) -> ModelSpec {
        let mut out = self.clone();
        for layer in &mut out.layers {
            match layer {
                LayerSpec::Conv(c) => c.bits = bits,
                LayerSpec::Linear { bits: b, .. } => *b = bits,
                _ => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    Wa(WaLayer),
    Mixed(MixedOp),
    BatchNorm(BatchNorm),
    Relu,
    MaxPool,
    GlobalAvgPool,
    Linear(Linear),
    SaveSkip,
    AddSkip,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub name: String,
    pub layer: Layer,
    /// Activation shape entering this node, batch size 1.
    pub in_dims: [usize; 4],
}

#[derive(Debug, Clone)]
enum Ctx {
    Conv(ConvContext),
    Wa(WaContext),
    Mixed(MixedContext),
    BatchNorm(BnContext),
    Relu(Tensor4),
    MaxPool(Vec<usize>, [usize; 4]),
    GlobalAvgPool([usize; 4]),
    Linear(LinearContext),
    SaveSkip,
    AddSkip,
}

/// Saved forward state of a whole model.
#[derive(Debug, Clone)]
pub struct Tape {
    ctxs: Vec<Ctx>,
    /// First layer whose output had a non-finite value.
    pub first_nonfinite: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub nodes: Vec<Node>,
}

fn he_normal(rng: &mut ChaCha8Rng, count: usize, fan_in: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..count).map(|_| normal.sample(rng)).collect()
}

/// Builds the runtime layer for one convolution spec with the given filters.
pub fn build_conv(spec: &ConvSpec, weights: Tensor4) -> Result<Layer> {
    spec.bits.validate()?;
    match spec.algo {
        ConvAlgo::Winograd(m) => {
            if spec.stride != 1 {
                return Err(Error::UnsupportedAlgo(format!(
                    "layer {}: Winograd needs stride 1; replace stride 2 with max pooling",
                    spec.name
                )));
            }
            if spec.in_ch <= 3 {
                log::warn!("layer {}: Winograd on a {}-channel input rarely pays off", spec.name, spec.in_ch);
            }
            let tf = default_transform(m, spec.k)?.to_f64();
            Ok(Layer::Wa(WaLayer::new(&spec.name, weights, &tf, spec.pad, spec.flex, spec.bits)?))
        }
        _ => Ok(Layer::Conv(ConvLayer::new(&spec.name, weights, spec.stride, spec.pad, spec.bits)?)),
    }
}

impl Model {
    /// Instantiates `spec` with He-normal weights drawn from `seed`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = Vec::with_capacity(spec.layers.len());
        let mut dims = [1, spec.input[0], spec.input[1], spec.input[2]];
        let mut skips: Vec<[usize; 4]> = Vec::new();
        for (i, ls) in spec.layers.iter().enumerate() {
            let in_dims = dims;
            let (name, layer) = match ls {
                LayerSpec::Conv(c) => {
                    if dims[1] != c.in_ch {
                        return shape_err(format!("layer {} expects {} channels, gets {}", c.name, c.in_ch, dims[1]));
                    }
                    let fan_in = c.in_ch * c.k * c.k;
                    let w = Tensor4::new([c.out_ch, c.in_ch, c.k, c.k], he_normal(&mut rng, c.out_ch * fan_in, fan_in))?;
                    let layer = build_conv(c, w)?;
                    let (oh, ow) = match &layer {
                        Layer::Wa(l) => l.out_hw(dims[2], dims[3])?,
                        Layer::Conv(l) => l.out_hw(dims[2], dims[3])?,
                        _ => unreachable!(),
                    };
                    dims = [1, c.out_ch, oh, ow];
                    (c.name.clone(), layer)
                }
                LayerSpec::BatchNorm { name, channels } => {
                    if *channels != dims[1] {
                        return shape_err(format!("{name}: {channels} channels, activation has {}", dims[1]));
                    }
                    (name.clone(), Layer::BatchNorm(BatchNorm::new(name, *channels)))
                }
                LayerSpec::Relu => (format!("relu{i}"), Layer::Relu),
                LayerSpec::MaxPool => {
                    if dims[2] % 2 != 0 || dims[3] % 2 != 0 {
                        return shape_err(format!("max pool on odd {}x{} map", dims[2], dims[3]));
                    }
                    dims = [1, dims[1], dims[2] / 2, dims[3] / 2];
                    (format!("pool{i}"), Layer::MaxPool)
                }
                LayerSpec::GlobalAvgPool => {
                    dims = [1, dims[1], 1, 1];
                    (format!("gap{i}"), Layer::GlobalAvgPool)
                }
                LayerSpec::Linear { name, in_features, out_features, bits } => {
                    if *in_features != dims[1] * dims[2] * dims[3] {
                        return shape_err(format!("{name}: {in_features} features, activation has {}", dims[1] * dims[2] * dims[3]));
                    }
                    let w = he_normal(&mut rng, in_features * out_features, *in_features);
                    dims = [1, *out_features, 1, 1];
                    (name.clone(), Layer::Linear(Linear::new(name, w, *in_features, *out_features, *bits)))
                }
                LayerSpec::SaveSkip => {
                    skips.push(dims);
                    (format!("skip{i}"), Layer::SaveSkip)
                }
                LayerSpec::AddSkip => {
                    let saved = skips.pop().ok_or_else(|| Error::Shape("residual add without a saved skip".into()))?;
                    if saved != dims {
                        return shape_err(format!("residual operands differ: {saved:?} vs {dims:?}"));
                    }
                    (format!("add{i}"), Layer::AddSkip)
                }
            };
            nodes.push(Node { name, layer, in_dims });
        }
        if dims[1] != spec.classes || dims[2] != 1 || dims[3] != 1 {
            return shape_err(format!("model ends in {dims:?}, expected {} logits", spec.classes));
        }
        if !skips.is_empty() {
            return shape_err("unmatched saved skip");
        }
        Ok(Self { spec: spec.clone(), nodes })
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, Tape)> {
        let [_, c, h, w] = x.dims();
        if [c, h, w] != self.spec.input {
            return shape_err(format!("model input is {:?}, got {:?}", self.spec.input, [c, h, w]));
        }
        let mut cur = x.clone();
        let mut ctxs = Vec::with_capacity(self.nodes.len());
        let mut skips: Vec<Tensor4> = Vec::new();
        let mut first_nonfinite = None;
        for node in &mut self.nodes {
            let (out, ctx) = match &mut node.layer {
                Layer::Conv(l) => {
                    let (y, c) = l.forward(&cur, mode)?;
                    (y, Ctx::Conv(c))
                }
                Layer::Wa(l) => {
                    let (y, c) = l.forward(&cur, mode)?;
                    (y, Ctx::Wa(c))
                }
                Layer::Mixed(l) => {
                    let (y, c) = l.forward(&cur, mode)?;
                    (y, Ctx::Mixed(c))
                }
                Layer::BatchNorm(l) => {
                    let (y, c) = l.forward(&cur, mode)?;
                    (y, Ctx::BatchNorm(c))
                }
                Layer::Relu => (relu_forward(&cur), Ctx::Relu(cur.clone())),
                Layer::MaxPool => {
                    let (y, arg) = maxpool2x2(&cur)?;
                    (y, Ctx::MaxPool(arg, cur.dims()))
                }
                Layer::GlobalAvgPool => (global_avg_pool(&cur), Ctx::GlobalAvgPool(cur.dims())),
                Layer::Linear(l) => {
                    let (y, c) = l.forward(&cur, mode)?;
                    (y, Ctx::Linear(c))
                }
                Layer::SaveSkip => {
                    skips.push(cur.clone());
                    (cur.clone(), Ctx::SaveSkip)
                }
                Layer::AddSkip => {
                    let s = skips.pop().ok_or_else(|| Error::State("residual add without saved skip".into()))?;
                    let mut y = cur.clone();
                    y.data_mut().iter_mut().zip(s.data()).for_each(|(a, b)| *a += b);
                    (y, Ctx::AddSkip)
                }
            };
            if first_nonfinite.is_none() && !out.data().iter().all(|v| v.is_finite()) {
                first_nonfinite = Some(node.name.clone());
            }
            cur = out;
            ctxs.push(ctx);
        }
        Ok((cur, Tape { ctxs, first_nonfinite }))
    }

    /// Backpropagates `grad` (dL/dlogits), accumulating parameter gradients,
    /// and returns dL/dinput.
    pub fn backward(&mut self, tape: &Tape, grad: &Tensor4) -> Result<Tensor4> {
        if tape.ctxs.len() != self.nodes.len() {
            return Err(Error::State("tape does not belong to this model".into()));
        }
        let mut g = grad.clone();
        let mut skip_grads: Vec<Tensor4> = Vec::new();
        for (node, ctx) in self.nodes.iter_mut().zip(&tape.ctxs).rev() {
            g = match (&mut node.layer, ctx) {
                (Layer::Conv(l), Ctx::Conv(c)) => l.backward(c, &g)?,
                (Layer::Wa(l), Ctx::Wa(c)) => l.backward_accumulate(c, &g)?,
                (Layer::Mixed(l), Ctx::Mixed(c)) => l.backward(c, &g)?,
                (Layer::BatchNorm(l), Ctx::BatchNorm(c)) => l.backward(c, &g)?,
                (Layer::Relu, Ctx::Relu(x)) => relu_backward(x, &g),
                (Layer::MaxPool, Ctx::MaxPool(arg, dims)) => maxpool2x2_backward(&g, arg, *dims),
                (Layer::GlobalAvgPool, Ctx::GlobalAvgPool(dims)) => global_avg_pool_backward(*dims, &g),
                (Layer::Linear(l), Ctx::Linear(c)) => l.backward(c, &g)?,
                (Layer::AddSkip, Ctx::AddSkip) => {
                    skip_grads.push(g.clone());
                    g
                }
                (Layer::SaveSkip, Ctx::SaveSkip) => {
                    let s = skip_grads.pop().ok_or_else(|| Error::State("unbalanced skip gradients".into()))?;
                    let mut out = g;
                    out.data_mut().iter_mut().zip(s.data()).for_each(|(a, b)| *a += b);
                    out
                }
                _ => return Err(Error::State(format!("tape entry does not match layer {}", node.name))),
            };
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.layer {
                Layer::Conv(l) => out.push(&l.weight),
                Layer::Wa(l) => out.extend(l.params()),
                Layer::Mixed(l) => out.extend(l.params()),
                Layer::BatchNorm(l) => out.extend([&l.gamma, &l.beta]),
                Layer::Linear(l) => out.extend([&l.weight, &l.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for node in &mut self.nodes {
            match &mut node.layer {
                Layer::Conv(l) => out.push(&mut l.weight),
                Layer::Wa(l) => out.extend(l.params_mut()),
                Layer::Mixed(l) => out.extend(l.params_mut()),
                Layer::BatchNorm(l) => out.extend([&mut l.gamma, &mut l.beta]),
                Layer::Linear(l) => out.extend([&mut l.weight, &mut l.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Trainable scalar count (architecture logits excluded).
    pub fn param_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.kind != crate::train::ParamKind::Arch)
            .map(|p| p.len())
            .sum()
    }

    /// Copies every parameter and batch-norm statistic whose name matches
    /// a parameter of `src` with the same shape. Returns the copied names.
    pub fn load_state_from(&mut self, src: &Model) -> Vec<String> {
        let mut copied = Vec::new();
        let src_params = src.params();
        for p in self.params_mut() {
            if let Some(s) = src_params.iter().find(|s| s.name == p.name && s.dims == p.dims) {
                p.value.clone_from(&s.value);
                copied.push(p.name.clone());
            }
        }
        for node in &mut self.nodes {
            if let Layer::BatchNorm(bn) = &mut node.layer {
                if let Some(Layer::BatchNorm(sbn)) = src.nodes.iter().find(|n| n.name == node.name).map(|n| &n.layer) {
                    bn.running_mean.clone_from(&sbn.running_mean);
                    bn.running_var.clone_from(&sbn.running_var);
                }
            }
        }
        copied
    }
}
