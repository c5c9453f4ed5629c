//! Latency-aware per-layer search over convolution algorithms (and
//! optionally bit widths): a supernet of mixed layers trained by
//! alternating weight and architecture steps with path sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::LatencyTable;
use crate::conv::{ConvAlgo, ConvShape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor4;
use crate::quant::{Bits, Mode, QSpec};
use crate::train::layers::{ConvContext, ConvLayer};
use crate::train::loss::{correct_count, loss_weights, softmax_ce};
use crate::train::model::{build_conv, ConvSpec, Layer, LayerSpec, Model, ModelSpec};
use crate::train::optim::{OptimKind, Optimizer};
use crate::train::wa::{WaContext, WaLayer};
use crate::train::{Param, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateOp {
    pub algo: ConvAlgo,
    pub bits: QSpec,
}

impl CandidateOp {
    pub fn label(&self) -> String {
        format!("{}_{}", self.algo.name(), self.bits.bits.as_u32())
    }
}

/// Candidate algorithms crossed with candidate bit widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub algos: Vec<ConvAlgo>,
    pub bits: Vec<Bits>,
}

const WA_ALGOS: [ConvAlgo; 4] = [ConvAlgo::Im2row, ConvAlgo::Winograd(2), ConvAlgo::Winograd(4), ConvAlgo::Winograd(6)];

impl SearchSpace {
    /// im2row and F2/F4/F6 at one global bit width.
    pub fn wa(bits: Bits) -> Self {
        Self { algos: WA_ALGOS.to_vec(), bits: vec![bits] }
    }

    /// im2row and F2/F4/F6, each at FLOAT32, INT16 and INT8.
    pub fn wa_q() -> Self {
        Self { algos: WA_ALGOS.to_vec(), bits: vec![Bits::Float32, Bits::Int(16), Bits::Int(8)] }
    }

    /// `"wa"` (with `bits`) or `"wa-q"`.
    pub fn parse(name: &str, bits: Bits) -> Result<Self> {
        match name {
            "wa" => Ok(Self::wa(bits)),
            "wa-q" => Ok(Self::wa_q()),
            _ => Err(Error::Config(format!("unknown search space {name:?} (wa, wa-q)"))),
        }
    }

    /// Candidates valid for a layer; Winograd needs stride 1.
    pub fn candidates(&self, layer: &ConvSpec) -> Vec<CandidateOp> {
        let mut out = Vec::new();
        for &algo in &self.algos {
            if algo.is_winograd() && layer.stride != 1 {
                continue;
            }
            for &b in &self.bits {
                out.push(CandidateOp { algo, bits: QSpec { bits: b, momentum: layer.bits.momentum } });
            }
        }
        out
    }
}

/// Input layers and non-3×3 layers keep their algorithm.
pub fn is_searchable(c: &ConvSpec) -> bool {
    !c.fixed && c.k == 3 && c.stride == 1
}

#[derive(Debug, Clone)]
pub enum CandLayer {
    Conv(ConvLayer),
    Wa(WaLayer),
}

#[derive(Debug, Clone)]
enum CandCtx {
    Conv(ConvContext),
    Wa(WaContext),
}

impl CandLayer {
    fn weight(&self) -> &Param {
        match self {
            CandLayer::Conv(l) => &l.weight,
            CandLayer::Wa(l) => &l.weight,
        }
    }

    fn weight_mut(&mut self) -> &mut Param {
        match self {
            CandLayer::Conv(l) => &mut l.weight,
            CandLayer::Wa(l) => &mut l.weight,
        }
    }

    fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, CandCtx)> {
        Ok(match self {
            CandLayer::Conv(l) => {
                let (y, c) = l.forward(x, mode)?;
                (y, CandCtx::Conv(c))
            }
            CandLayer::Wa(l) => {
                let (y, c) = l.forward(x, mode)?;
                (y, CandCtx::Wa(c))
            }
        })
    }

    fn backward(&mut self, ctx: &CandCtx, g: &Tensor4) -> Result<Tensor4> {
        match (self, ctx) {
            (CandLayer::Conv(l), CandCtx::Conv(c)) => l.backward(c, g),
            (CandLayer::Wa(l), CandCtx::Wa(c)) => l.backward_accumulate(c, g),
            _ => Err(Error::State("candidate context mismatch".into())),
        }
    }
}

/// A searchable layer: every candidate operation plus its architecture
/// logits. Forward runs the `active` candidates; with two active, their
/// outputs are mixed with the pairwise-renormalized probabilities.
#[derive(Debug, Clone)]
pub struct MixedOp {
    pub name: String,
    pub shape: ConvShape,
    pub candidates: Vec<CandidateOp>,
    pub ops: Vec<CandLayer>,
    pub alpha: Param,
    /// Table latency of each candidate in ms.
    pub latencies: Vec<f64>,
    pub active: Vec<usize>,
    /// All candidates hold the same raw filters.
    pub shared: bool,
}

#[derive(Debug, Clone)]
pub struct MixedContext {
    active: Vec<usize>,
    mix: Vec<f64>,
    ctxs: Vec<CandCtx>,
    outputs: Vec<Tensor4>,
}

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let mx = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl MixedOp {
    pub fn new(spec: &ConvSpec, shape: ConvShape, candidates: Vec<CandidateOp>, weights: &Tensor4, table: &LatencyTable, shared: bool) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::Config(format!("layer {} has no valid candidate", spec.name)));
        }
        let mut ops = Vec::with_capacity(candidates.len());
        let mut latencies = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let cs = ConvSpec {
                name: format!("{}.{}", spec.name, c.label()),
                algo: c.algo,
                bits: c.bits,
                flex: false,
                ..spec.clone()
            };
            ops.push(match build_conv(&cs, weights.clone())? {
                Layer::Conv(l) => CandLayer::Conv(l),
                Layer::Wa(l) => CandLayer::Wa(l),
                _ => unreachable!("build_conv returns a convolution"),
            });
            latencies.push(table.lookup(c.algo, &shape, c.bits.bits.as_u32())?);
        }
        let n = candidates.len();
        Ok(Self {
            name: spec.name.clone(),
            shape,
            candidates,
            ops,
            alpha: Param::new(format!("{}.alpha", spec.name), ParamKind::Arch, vec![n], vec![0.0; n]),
            latencies,
            active: vec![0],
            shared,
        })
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.alpha.value)
    }

    /// Arg-max candidate, lowest index on ties.
    pub fn best(&self) -> usize {
        let a = &self.alpha.value;
        (0..a.len()).fold(0, |b, i| if a[i] > a[b] { i } else { b })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.ops.iter().map(|o| o.weight()).collect();
        v.push(&self.alpha);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.ops.iter_mut().map(|o| o.weight_mut()).collect();
        v.push(&mut self.alpha);
        v
    }

    /// Copies the filters of the first active candidate to all others.
    pub fn sync_shared(&mut self) {
        if !self.shared {
            return;
        }
        let src = self.ops[self.active[0]].weight().value.clone();
        for op in &mut self.ops {
            op.weight_mut().value.clone_from(&src);
        }
    }

    pub fn forward(&mut self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, MixedContext)> {
        let active = self.active.clone();
        if active.is_empty() || active.len() > 2 || active.iter().any(|&i| i >= self.ops.len()) {
            return Err(Error::State(format!("layer {}: invalid active set {active:?}", self.name)));
        }
        let mix = if active.len() == 1 {
            vec![1.0]
        } else {
            softmax(&[self.alpha.value[active[0]], self.alpha.value[active[1]]])
        };
        let mut ctxs = Vec::with_capacity(active.len());
        let mut outputs = Vec::with_capacity(active.len());
        for &i in &active {
            let (y, c) = self.ops[i].forward(x, mode)?;
            ctxs.push(c);
            outputs.push(y);
        }
        let mut y = outputs[0].clone();
        if active.len() == 2 {
            for ((v, a), b) in y.data_mut().iter_mut().zip(outputs[0].data()).zip(outputs[1].data()) {
                *v = mix[0] * a + mix[1] * b;
            }
        } else {
            outputs.clear();
        }
        Ok((y, MixedContext { active, mix, ctxs, outputs }))
    }

    pub fn backward(&mut self, ctx: &MixedContext, g: &Tensor4) -> Result<Tensor4> {
        let mut dx: Option<Tensor4> = None;
        for (k, &i) in ctx.active.iter().enumerate() {
            let mut gk = g.clone();
            gk.data_mut().iter_mut().for_each(|v| *v *= ctx.mix[k]);
            let d = self.ops[i].backward(&ctx.ctxs[k], &gk)?;
            dx = Some(match dx {
                None => d,
                Some(mut acc) => {
                    acc.data_mut().iter_mut().zip(d.data()).for_each(|(a, b)| *a += b);
                    acc
                }
            });
        }
        if ctx.active.len() == 2 {
            let s: Vec<f64> = ctx.outputs.iter().map(|y| y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()).collect();
            for (j, &aj) in ctx.active.iter().enumerate() {
                let mut d = 0.0;
                for k in 0..2 {
                    let delta = if j == k { 1.0 } else { 0.0 };
                    d += s[k] * ctx.mix[k] * (delta - ctx.mix[j]);
                }
                self.alpha.grad[aj] += d;
            }
        }
        Ok(dx.expect("at least one active candidate"))
    }
}

/// Samples `k` distinct candidates without replacement from
/// `softmax(alpha)`; all of them when there are at most `k`.
pub fn sample_paths<R: Rng>(alpha: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    if alpha.len() <= k {
        return (0..alpha.len()).collect();
    }
    let mut p = softmax(alpha);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = p.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = p.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        for (i, &v) in p.iter().enumerate() {
            if v > 0.0 && u < v {
                pick = i;
                break;
            }
            u -= v;
        }
        out.push(pick);
        p[pick] = 0.0;
    }
    out
}

/// `Σ_layers Σ_i softmax(α)_i · lat_i` and its gradient with respect to
/// every α entry.
pub fn expected_latency(alphas: &[Vec<f64>], lats: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if alphas.len() != lats.len() {
        return Err(Error::Shape(format!("{} logit vectors for {} layers", alphas.len(), lats.len())));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(alphas.len());
    for (a, l) in alphas.iter().zip(lats) {
        if a.len() != l.len() {
            return Err(Error::Shape(format!("{} logits for {} latencies", a.len(), l.len())));
        }
        let p = softmax(a);
        let e: f64 = p.iter().zip(l).map(|(p, l)| p * l).sum();
        total += e;
        grads.push(p.iter().zip(l).map(|(p, l)| p * (l - e)).collect());
    }
    Ok((total, grads))
}

/// Candidate latencies of each searchable layer of a supernet.
pub fn layer_latencies(table: &LatencyTable, layers: &[(ConvShape, Vec<CandidateOp>)]) -> Result<Vec<Vec<f64>>> {
    layers
        .iter()
        .map(|(s, cands)| cands.iter().map(|c| table.lookup(c.algo, s, c.bits.bits.as_u32())).collect())
        .collect()
}

fn conv_shape(c: &ConvSpec, in_dims: [usize; 4]) -> ConvShape {
    ConvShape {
        in_ch: c.in_ch,
        out_ch: c.out_ch,
        in_h: in_dims[2],
        in_w: in_dims[3],
        k: c.k,
        stride: c.stride,
        pad: c.pad,
    }
}

/// Shapes of the searchable layers of `spec`, in order.
pub fn searchable_shapes(spec: &ModelSpec) -> Result<Vec<(String, ConvShape)>> {
    let model = Model::build(spec, 0)?;
    let mut out = Vec::new();
    for (node, ls) in model.nodes.iter().zip(&spec.layers) {
        if let LayerSpec::Conv(c) = ls {
            if is_searchable(c) {
                out.push((c.name.clone(), conv_shape(c, node.in_dims)));
            }
        }
    }
    Ok(out)
}

/// Builds the supernet: every searchable convolution of `spec` becomes a
/// mixed layer whose candidates start from the macro's initial filters.
pub fn build_supernet(spec: &ModelSpec, space: &SearchSpace, table: &LatencyTable, seed: u64, shared: bool) -> Result<Model> {
    let mut model = Model::build(spec, seed)?;
    for (node, ls) in model.nodes.iter_mut().zip(&spec.layers) {
        let LayerSpec::Conv(c) = ls else { continue };
        if !is_searchable(c) {
            continue;
        }
        let weights = match &node.layer {
            Layer::Conv(l) => l.weights(),
            Layer::Wa(l) => l.weights(),
            _ => unreachable!(),
        };
        let shape = conv_shape(c, node.in_dims);
        let cands = space.candidates(c);
        node.layer = Layer::Mixed(MixedOp::new(c, shape, cands, &weights, table, shared)?);
    }
    Ok(model)
}

fn mixed_ops(model: &mut Model) -> Vec<&mut MixedOp> {
    model
        .nodes
        .iter_mut()
        .filter_map(|n| match &mut n.layer {
            Layer::Mixed(m) => Some(m),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_lr: f64,
    pub arch_lr: f64,
    /// Second-moment decay of the architecture Adam (its β1 is 0). The
    /// default 0 turns every arch update into a fixed-size sign step, so a
    /// small latency gap between two cheap candidates moves α as fast as a
    /// large one; with a long second-moment memory those late comparisons
    /// are drowned out by the large gradients seen early in the search.
    pub arch_beta2: f64,
    /// λ0 on the weights.
    pub weight_decay: f64,
    /// λ1 on the architecture logits.
    pub lambda1: f64,
    /// λ2 on the expected latency.
    pub lambda2: f64,
    /// Expected latency enters the loss divided by this many ms; `None`
    /// uses the latency of the macro architecture's own choices.
    pub latency_unit_ms: Option<f64>,
    /// Architecture steps use the validation split when true.
    pub arch_on_val: bool,
    pub share_weights: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            weight_lr: 0.05,
            arch_lr: 0.05,
            arch_beta2: 0.0,
            weight_decay: 0.0,
            lambda1: 1e-4,
            lambda2: 0.01,
            latency_unit_ms: None,
            arch_on_val: true,
            share_weights: false,
            seed: 0,
        }
    }
}

/// Alternating-stage state: weight optimizer, arch optimizer, sampler.
pub struct Searcher {
    pub cfg: SearchConfig,
    pub weight_opt: Optimizer,
    pub arch_opt: Optimizer,
    pub rng: ChaCha8Rng,
    pub latency_unit_ms: f64,
    pub step: usize,
}

impl Searcher {
    pub fn new(cfg: SearchConfig, latency_unit_ms: f64) -> Self {
        Self {
            weight_opt: Optimizer::new(OptimKind::sgd()),
            arch_opt: Optimizer::new(OptimKind::Adam { beta1: 0.0, beta2: cfg.arch_beta2, eps: 1e-8 }),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            latency_unit_ms,
            step: 0,
            cfg,
        }
    }

    /// One weight step with a single sampled path per layer. Returns the
    /// loss and the number of correct predictions.
    pub fn weight_step(&mut self, model: &mut Model, x: &Tensor4, labels: &[usize]) -> Result<(f64, usize)> {
        for m in mixed_ops(model) {
            m.active = sample_paths(&m.alpha.value, 1, &mut self.rng);
        }
        model.zero_grad();
        let (logits, tape) = model.forward(x, Mode::Train)?;
        if let Some(layer) = &tape.first_nonfinite {
            return Err(Error::NonFinite { layer: layer.clone(), step: self.step });
        }
        let mut params = model.params_mut();
        let (loss, grad) = loss_weights(&logits, labels, &mut params, self.cfg.weight_decay, false)?;
        drop(params);
        if !loss.is_finite() {
            return Err(Error::NonFinite { layer: "loss".into(), step: self.step });
        }
        model.backward(&tape, &grad)?;
        let mut params: Vec<_> = model.params_mut().into_iter().filter(|p| p.kind != ParamKind::Arch).collect();
        self.weight_opt.step(&mut params, self.cfg.weight_lr)?;
        for m in mixed_ops(model) {
            m.sync_shared();
        }
        self.step += 1;
        Ok((loss, correct_count(&logits, labels)))
    }

    /// One architecture step on two sampled paths per layer; only the
    /// sampled logits change. Returns the architecture loss.
    pub fn arch_step(&mut self, model: &mut Model, x: &Tensor4, labels: &[usize]) -> Result<f64> {
        for m in mixed_ops(model) {
            m.active = sample_paths(&m.alpha.value, 2, &mut self.rng);
        }
        model.zero_grad();
        let (logits, tape) = model.forward(x, Mode::Train)?;
        let (ce, grad) = softmax_ce(&logits, labels)?;
        if !ce.is_finite() {
            return Err(Error::NonFinite { layer: "arch loss".into(), step: self.step });
        }
        model.backward(&tape, &grad)?;
        let (l1, l2, unit) = (self.cfg.lambda1, self.cfg.lambda2, self.latency_unit_ms);
        let mut loss = ce;
        for m in mixed_ops(model) {
            let (lat, lg) = pair_latency(&m.alpha.value, &m.latencies, &m.active);
            loss += l2 * lat / unit;
            let mut mask = vec![false; m.alpha.len()];
            for &i in &m.active {
                mask[i] = true;
            }
            for i in 0..m.alpha.len() {
                let a = m.alpha.value[i];
                loss += l1 * a * a;
                if mask[i] {
                    m.alpha.grad[i] += 2.0 * l1 * a + l2 * lg[i] / unit;
                } else {
                    m.alpha.grad[i] = 0.0;
                }
            }
            self.arch_opt.step_masked(&mut m.alpha, self.cfg.arch_lr, &mask)?;
            if !m.alpha.value.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { layer: m.name.clone(), step: self.step });
            }
        }
        self.step += 1;
        Ok(loss)
    }
}

/// Expected latency of one layer over its sampled candidates only, with the
/// probabilities renormalized over that subset. Gradient entries outside
/// `active` are zero.
pub fn pair_latency(alpha: &[f64], lats: &[f64], active: &[usize]) -> (f64, Vec<f64>) {
    let sub: Vec<f64> = active.iter().map(|&i| alpha[i]).collect();
    let q = softmax(&sub);
    let e: f64 = active.iter().zip(&q).map(|(&i, q)| q * lats[i]).sum();
    let mut grad = vec![0.0; alpha.len()];
    for (&i, q) in active.iter().zip(&q) {
        grad[i] = q * (lats[i] - e);
    }
    (e, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedLayer {
    pub name: String,
    pub algo: ConvAlgo,
    pub bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedArch {
    pub model: String,
    pub layers: Vec<DerivedLayer>,
    /// Table latency of the chosen candidates of the searchable layers.
    pub expected_latency_ms: f64,
    pub param_count: usize,
}

impl DerivedArch {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// The macro specification with every listed layer's choice applied.
    pub fn apply(&self, spec: &ModelSpec) -> Result<ModelSpec> {
        let mut out = spec.clone();
        for d in &self.layers {
            let c = out
                .layers
                .iter_mut()
                .find_map(|l| match l {
                    LayerSpec::Conv(c) if c.name == d.name => Some(c),
                    _ => None,
                })
                .ok_or_else(|| Error::MissingKey(format!("layer {}", d.name)))?;
            c.algo = d.algo;
            c.bits = QSpec { bits: Bits::from_u32(d.bits)?, momentum: c.bits.momentum };
            c.flex = false;
        }
        Ok(out)
    }
}

/// Per-layer arg-max choices of a supernet built from `spec`.
pub fn derive(model: &Model, spec: &ModelSpec) -> Result<DerivedArch> {
    let mut layers = Vec::new();
    let mut latency = 0.0;
    for (node, ls) in model.nodes.iter().zip(&spec.layers) {
        let LayerSpec::Conv(c) = ls else { continue };
        match &node.layer {
            Layer::Mixed(m) => {
                let p = m.probs();
                let best = m.best();
                let runner_up = p.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, v)| *v).fold(0.0, f64::max);
                if p.len() > 1 && p[best] - runner_up < 0.05 {
                    log::warn!("layer {}: top two candidates within {:.3} probability", m.name, p[best] - runner_up);
                }
                let cand = m.candidates[best];
                latency += m.latencies[best];
                layers.push(DerivedLayer { name: c.name.clone(), algo: cand.algo, bits: cand.bits.bits.as_u32() });
            }
            _ => layers.push(DerivedLayer { name: c.name.clone(), algo: c.algo, bits: c.bits.bits.as_u32() }),
        }
    }
    let mut arch = DerivedArch { model: spec.name.clone(), layers, expected_latency_ms: latency, param_count: 0 };
    arch.param_count = Model::build(&arch.apply(spec)?, 0)?.param_count();
    Ok(arch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEpoch {
    pub epoch: usize,
    pub weight_loss: f64,
    pub train_acc: f64,
    pub arch_loss: f64,
    pub expected_latency_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub arch: DerivedArch,
    pub history: Vec<SearchEpoch>,
    pub supernet: Model,
}

/// Runs the alternating search and derives the final architecture.
pub fn search(spec: &ModelSpec, space: &SearchSpace, table: &LatencyTable, cfg: &SearchConfig, train_ds: &Dataset, val_ds: &Dataset) -> Result<SearchResult> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut model = build_supernet(spec, space, table, cfg.seed, cfg.share_weights)?;
    let unit = match cfg.latency_unit_ms {
        Some(u) if u > 0.0 => u,
        Some(u) => return Err(Error::Config(format!("latency unit must be positive, got {u}"))),
        None => {
            let mut total = 0.0;
            for (name, shape) in searchable_shapes(spec)? {
                let c = spec.conv_specs().find(|c| c.name == name).expect("searchable layer exists");
                total += table.lookup(c.algo, &shape, c.bits.bits.as_u32())?;
            }
            if total > 0.0 { total } else { 1.0 }
        }
    };
    let mut searcher = Searcher::new(cfg.clone(), unit);
    let arch_src = if cfg.arch_on_val && !val_ds.is_empty() { val_ds } else { train_ds };
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut history = Vec::new();
    let mut arch_cursor = 0;
    let mut arch_order: Vec<usize> = (0..arch_src.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut order_rng);
        let (mut wl, mut correct, mut al, mut nb) = (0.0, 0, 0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train_ds.batch(chunk)?;
            let (l, c) = searcher.weight_step(&mut model, &x, &y)?;
            wl += l * y.len() as f64;
            correct += c;
            if arch_cursor + cfg.batch_size > arch_order.len() {
                rand::seq::SliceRandom::shuffle(arch_order.as_mut_slice(), &mut order_rng);
                arch_cursor = 0;
            }
            let end = (arch_cursor + cfg.batch_size).min(arch_order.len());
            let (xa, ya) = arch_src.batch(&arch_order[arch_cursor..end])?;
            arch_cursor = end;
            al += searcher.arch_step(&mut model, &xa, &ya)?;
            nb += 1;
        }
        let ops = mixed_ops(&mut model);
        let alphas: Vec<Vec<f64>> = ops.iter().map(|m| m.alpha.value.clone()).collect();
        let lats: Vec<Vec<f64>> = ops.iter().map(|m| m.latencies.clone()).collect();
        let (lat, _) = expected_latency(&alphas, &lats)?;
        let n = train_ds.len().max(1) as f64;
        history.push(SearchEpoch {
            epoch: epoch + 1,
            weight_loss: wl / n,
            train_acc: correct as f64 / n,
            arch_loss: al / nb.max(1) as f64,
            expected_latency_ms: lat,
        });
    }
    let arch = derive(&model, spec)?;
    Ok(SearchResult { arch, history, supernet: model })
}
