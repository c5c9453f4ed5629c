//! Desk-scale model presets.

use serde::{Deserialize, Serialize};

use crate::conv::ConvAlgo;
use crate::quant::QSpec;
use crate::train::model::{ConvSpec, LayerSpec, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetOpts {
    /// Algorithm of the non-input convolutions.
    pub algo: ConvAlgo,
    pub bits: QSpec,
    pub flex: bool,
    pub in_ch: usize,
    pub size: usize,
    pub classes: usize,
    /// Channel multiplier applied to the base widths.
    pub width: usize,
}

impl Default for PresetOpts {
    fn default() -> Self {
        Self {
            algo: ConvAlgo::Direct,
            bits: QSpec::float32(),
            flex: false,
            in_ch: 1,
            size: 16,
            classes: 4,
            width: 1,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv(name: &str, in_ch: usize, out_ch: usize, k: usize, algo: ConvAlgo, o: &PresetOpts, fixed: bool, pin_f2: bool) -> LayerSpec {
    let algo = match algo {
        ConvAlgo::Winograd(_) if pin_f2 => ConvAlgo::Winograd(2),
        a => a,
    };
    LayerSpec::Conv(ConvSpec {
        name: name.into(),
        in_ch,
        out_ch,
        k,
        stride: 1,
        pad: k / 2,
        algo,
        bits: o.bits,
        flex: o.flex && algo.is_winograd(),
        fixed,
        pin_f2,
    })
}

fn bn(name: &str, c: usize) -> LayerSpec {
    LayerSpec::BatchNorm { name: name.into(), channels: c }
}

/// Eight 3×3 convolutions in three stages (widths 8/16/32 times `width`).
/// The input convolution stays im2row, stride-2 downsampling is a 2×2 max
/// pool followed by a stride-1 convolution, and the last stage is pinned
/// to F2 whenever a Winograd algorithm is requested.
pub fn micro_resnet(o: &PresetOpts) -> ModelSpec {
    let (w1, w2, w3) = (8 * o.width, 16 * o.width, 32 * o.width);
    let a = o.algo;
    let mut l = vec![conv("conv0", o.in_ch, w1, 3, ConvAlgo::Im2row, o, true, false), bn("bn0", w1), LayerSpec::Relu];
    // stage 1: residual block
    l.extend([
        LayerSpec::SaveSkip,
        conv("conv1", w1, w1, 3, a, o, false, false),
        bn("bn1", w1),
        LayerSpec::Relu,
        conv("conv2", w1, w1, 3, a, o, false, false),
        bn("bn2", w1),
        LayerSpec::AddSkip,
        LayerSpec::Relu,
    ]);
    // stage 2: downsample, widen, residual block
    l.extend([
        LayerSpec::MaxPool,
        conv("conv3", w1, w2, 3, a, o, false, false),
        bn("bn3", w2),
        LayerSpec::Relu,
        LayerSpec::SaveSkip,
        conv("conv4", w2, w2, 3, a, o, false, false),
        bn("bn4", w2),
        LayerSpec::Relu,
        conv("conv5", w2, w2, 3, a, o, false, false),
        bn("bn5", w2),
        LayerSpec::AddSkip,
        LayerSpec::Relu,
    ]);
    // stage 3: kept at F2
    l.extend([
        LayerSpec::MaxPool,
        conv("conv6", w2, w3, 3, a, o, false, true),
        bn("bn6", w3),
        LayerSpec::Relu,
        LayerSpec::SaveSkip,
        conv("conv7", w3, w3, 3, a, o, false, true),
        bn("bn7", w3),
        LayerSpec::AddSkip,
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Linear { name: "fc".into(), in_features: w3, out_features: o.classes, bits: o.bits },
    ]);
    ModelSpec { name: "micro-resnet".into(), input: [o.in_ch, o.size, o.size], classes: o.classes, layers: l }
}

/// LeNet-style network with 5×5 kernels. The first convolution stays
/// im2row.
pub fn lenet_q(o: &PresetOpts) -> ModelSpec {
    let (w1, w2) = (6 * o.width, 16 * o.width);
    let s = o.size / 4;
    let l = vec![
        conv("conv0", o.in_ch, w1, 5, ConvAlgo::Im2row, o, true, false),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        conv("conv1", w1, w2, 5, o.algo, o, false, false),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::Linear { name: "fc1".into(), in_features: w2 * s * s, out_features: 64, bits: o.bits },
        LayerSpec::Relu,
        LayerSpec::Linear { name: "fc2".into(), in_features: 64, out_features: o.classes, bits: o.bits },
    ];
    ModelSpec { name: "lenet-q".into(), input: [o.in_ch, o.size, o.size], classes: o.classes, layers: l }
}

/// Two convolutions and a classifier; both convolutions use `algo`.
pub fn tiny_net(o: &PresetOpts) -> ModelSpec {
    let w = 8 * o.width;
    let l = vec![
        conv("conv0", o.in_ch, w, 3, o.algo, o, false, false),
        bn("bn0", w),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        conv("conv1", w, w, 3, o.algo, o, false, false),
        bn("bn1", w),
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Linear { name: "fc".into(), in_features: w, out_features: o.classes, bits: o.bits },
    ];
    ModelSpec { name: "tiny".into(), input: [o.in_ch, o.size, o.size], classes: o.classes, layers: l }
}

/// Fixed input convolution followed by three searchable 3×3 layers.
pub fn search_net(o: &PresetOpts) -> ModelSpec {
    let w = 8 * o.width;
    let mut l = vec![conv("conv0", o.in_ch, w, 3, ConvAlgo::Im2row, o, true, false), bn("bn0", w), LayerSpec::Relu];
    for i in 1..=3 {
        l.extend([conv(&format!("conv{i}"), w, w, 3, o.algo, o, false, false), bn(&format!("bn{i}"), w), LayerSpec::Relu]);
    }
    l.extend([
        LayerSpec::GlobalAvgPool,
        LayerSpec::Linear { name: "fc".into(), in_features: w, out_features: o.classes, bits: o.bits },
    ]);
    ModelSpec { name: "search-net".into(), input: [o.in_ch, o.size, o.size], classes: o.classes, layers: l }
}

pub fn by_name(name: &str, o: &PresetOpts) -> Option<ModelSpec> {
    match name {
        "micro-resnet" => Some(micro_resnet(o)),
        "lenet-q" => Some(lenet_q(o)),
        "tiny" => Some(tiny_net(o)),
        "search-net" => Some(search_net(o)),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = ["micro-resnet", "lenet-q", "tiny", "search-net"];
