//! Finite-difference oracles shared by the gradient tests and the
//! acceptance suite. Every check returns `(label, max relative error)`.

use super::*;
use winoq::conv::ConvAlgo;
use winoq::numerics::Tensor4;
use winoq::quant::{Mode, QSpec};
use winoq::train::layers::{BatchNorm, Linear};
use winoq::train::loss::softmax_ce;
use winoq::train::model::{ConvSpec, LayerSpec, ModelSpec};
use winoq::train::{Model, PresetOpts, WaLayer};
use winoq::transforms::default_transform;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-5;

pub type Errs = Vec<(String, f64)>;

fn wa_layer(m: usize, r: usize) -> WaLayer {
    let w = rand_tensor([2, 2, r, r], 100 + m as u64 * 10 + r as u64);
    let tf = default_transform(m, r).unwrap().to_f64();
    WaLayer::new("wa", w, &tf, r / 2, true, QSpec::float32()).unwrap()
}

/// Loss `<R, y>` of a clone of `layer` with one parameter tensor replaced.
fn wa_loss(layer: &WaLayer, x: &Tensor4, proj: &[f64], which: usize, v: &[f64]) -> f64 {
    let mut l = layer.clone();
    let mut x = x.clone();
    match which {
        0 => x.data_mut().copy_from_slice(v),
        1 => l.weight.value.copy_from_slice(v),
        2 => l.g.value.copy_from_slice(v),
        3 => l.bt.value.copy_from_slice(v),
        _ => l.at.value.copy_from_slice(v),
    }
    let (y, _) = l.forward(&x, Mode::Train).unwrap();
    dot(y.data(), proj)
}

/// Input, weight and transform gradients of a flex F(m, r) layer.
pub fn winograd_aware(m: usize, r: usize) -> Errs {
    let mut layer = wa_layer(m, r);
    let x = rand_tensor([1, 2, 8, 8], 7);
    let (y, ctx) = layer.forward(&x, Mode::Train).unwrap();
    let proj = rand_tensor(y.dims(), 8);
    let g = layer.backward(&ctx, &proj).unwrap();
    let bases = [x.data().to_vec(), layer.weight.value.clone(), layer.g.value.clone(), layer.bt.value.clone(), layer.at.value.clone()];
    let analytic = [g.d_input.data().to_vec(), g.d_weights, g.d_g, g.d_bt, g.d_at];
    let names = ["input", "weights", "G", "Bt", "At"];
    (0..5)
        .map(|k| {
            let fd = central_diff(&bases[k], H, |v| wa_loss(&layer, &x, proj.data(), k, v));
            (format!("F({m},{r}) d{}", names[k]), rel_inf(&analytic[k], &fd))
        })
        .collect()
}

pub fn batchnorm() -> Errs {
    let mut bn = BatchNorm::new("bn", 3);
    bn.gamma.value = vec![0.5, 1.5, -0.7];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    let x = rand_tensor([4, 3, 3, 3], 21);
    let (y, ctx) = bn.clone().forward(&x, Mode::Train).unwrap();
    let proj = rand_tensor(y.dims(), 22);
    let mut b2 = bn.clone();
    b2.forward(&x, Mode::Train).unwrap();
    let dx = b2.backward(&ctx, &proj).unwrap();
    let loss = |b: &BatchNorm, x: &Tensor4| dot(b.clone().forward(x, Mode::Train).unwrap().0.data(), proj.data());
    let fd_x = central_diff(x.data(), H, |v| loss(&bn, &Tensor4::new(x.dims(), v.to_vec()).unwrap()));
    let fd_g = central_diff(&bn.gamma.value, H, |v| {
        let mut b = bn.clone();
        b.gamma.value = v.to_vec();
        loss(&b, &x)
    });
    let fd_b = central_diff(&bn.beta.value, H, |v| {
        let mut b = bn.clone();
        b.beta.value = v.to_vec();
        loss(&b, &x)
    });
    vec![
        ("bn dinput".into(), rel_inf(dx.data(), &fd_x)),
        ("bn dgamma".into(), rel_inf(&b2.gamma.grad, &fd_g)),
        ("bn dbeta".into(), rel_inf(&b2.beta.grad, &fd_b)),
    ]
}

pub fn linear() -> Errs {
    let w = rand_tensor([1, 1, 3, 12], 31).into_data();
    let lin = Linear::new("fc", w, 12, 3, QSpec::float32());
    let x = rand_tensor([2, 3, 2, 2], 32);
    let mut l2 = lin.clone();
    let (y, ctx) = l2.forward(&x, Mode::Train).unwrap();
    let proj = rand_tensor(y.dims(), 33);
    let dx = l2.backward(&ctx, &proj).unwrap();
    let loss = |l: &Linear, x: &Tensor4| dot(l.clone().forward(x, Mode::Train).unwrap().0.data(), proj.data());
    let fd_x = central_diff(x.data(), H, |v| loss(&lin, &Tensor4::new(x.dims(), v.to_vec()).unwrap()));
    let fd_w = central_diff(&lin.weight.value, H, |v| {
        let mut l = lin.clone();
        l.weight.value = v.to_vec();
        loss(&l, &x)
    });
    let fd_b = central_diff(&lin.bias.value, H, |v| {
        let mut l = lin.clone();
        l.bias.value = v.to_vec();
        loss(&l, &x)
    });
    vec![
        ("fc dinput".into(), rel_inf(dx.data(), &fd_x)),
        ("fc dweight".into(), rel_inf(&l2.weight.grad, &fd_w)),
        ("fc dbias".into(), rel_inf(&l2.bias.grad, &fd_b)),
    ]
}

/// Every parameter gradient of `model` on a cross-entropy loss.
fn model_errs(model: &Model, x: &Tensor4, labels: &[usize]) -> Errs {
    let loss = |m: &Model| {
        let (logits, _) = m.clone().forward(x, Mode::Train).unwrap();
        softmax_ce(&logits, labels).unwrap().0
    };
    let mut m = model.clone();
    let (logits, tape) = m.forward(x, Mode::Train).unwrap();
    let (_, g) = softmax_ce(&logits, labels).unwrap();
    m.backward(&tape, &g).unwrap();
    (0..model.params().len())
        .map(|pi| {
            let fd = central_diff(&model.params()[pi].value, H, |v| {
                let mut mm = model.clone();
                mm.params_mut()[pi].value.copy_from_slice(v);
                loss(&mm)
            });
            (model.params()[pi].name.clone(), rel_inf(&m.params()[pi].grad, &fd))
        })
        .collect()
}

/// A residual net with flex F2 layers, checked end to end. Batch-norm shifts
/// keep the ReLU inputs positive so that no max-pool window is tied at zero,
/// where the loss is not differentiable.
pub fn whole_model() -> Errs {
    let opts = PresetOpts { algo: ConvAlgo::Winograd(2), flex: true, size: 8, ..PresetOpts::default() };
    let spec = winoq::train::presets::micro_resnet(&opts);
    let mut model = Model::build(&spec, 3).unwrap();
    for p in model.params_mut() {
        if p.name.ends_with(".beta") {
            p.value.iter_mut().for_each(|v| *v = 10.0);
        }
    }
    model_errs(&model, &rand_tensor([2, 1, 8, 8], 41), &[1, 3])
}

fn conv(name: &str, i: usize, o: usize) -> LayerSpec {
    LayerSpec::Conv(ConvSpec {
        name: name.into(),
        in_ch: i,
        out_ch: o,
        k: 3,
        stride: 1,
        pad: 1,
        algo: ConvAlgo::Im2row,
        bits: QSpec::float32(),
        flex: false,
        fixed: false,
        pin_f2: false,
    })
}

fn graph(mut layers: Vec<LayerSpec>) -> Errs {
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Linear { name: "fc".into(), in_features: 4, out_features: 4, bits: QSpec::float32() });
    let spec = ModelSpec { name: "g".into(), input: [1, 8, 8], classes: 4, layers };
    model_errs(&Model::build(&spec, 3).unwrap(), &rand_tensor([2, 1, 8, 8], 41), &[1, 3])
}

/// Small graphs with ReLU, max-pool and a residual skip.
pub fn relu_pool_skip() -> Errs {
    let mut out = graph(vec![conv("c0", 1, 4), LayerSpec::Relu, LayerSpec::MaxPool, conv("c1", 4, 4)]);
    out.extend(graph(vec![conv("c0", 1, 4), LayerSpec::SaveSkip, conv("c1", 4, 4), LayerSpec::AddSkip]));
    out
}

/// The full suite: flex layers for F2/F4 at both kernel sizes, BN, FC and
/// whole-network checks.
pub fn all() -> Errs {
    let mut out = Errs::new();
    for (m, r) in [(2, 3), (4, 3), (2, 5), (4, 5)] {
        out.extend(winograd_aware(m, r));
    }
    out.extend(batchnorm());
    out.extend(linear());
    out.extend(relu_pool_skip());
    out.extend(whole_model());
    out
}
