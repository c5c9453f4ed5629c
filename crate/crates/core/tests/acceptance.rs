//! Acceptance suite: one line per criterion, `PASS` or `FAIL`, with the
//! measured values. Runs without the libtest harness so the lines are always
//! shown; pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --release --test acceptance -- 7 9`.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use common::{central_diff, gradcheck, rel_inf, rng};
use winoq::bench::{analytic_table_for, LatencyRow, LatencyTable};
use winoq::conv::{
    conv2d_direct, conv2d_winograd, count_mults, filter_transform, mults_per_output, ConvAlgo, ConvShape,
};
use winoq::data::{gen_synthetic, Dataset};
use winoq::nas::{
    build_supernet, expected_latency, search, searchable_shapes, DerivedArch, SearchConfig, SearchSpace, Searcher,
};
use winoq::numerics::{rat, Rational, Tensor4};
use winoq::quant::{Bits, Mode, QSpec};
use winoq::train::model::ModelSpec;
use winoq::train::{adapt, checkpoint, evaluate, presets, train, Layer, Model, PresetOpts, TrainConfig};
use winoq::transforms::{default_transform, transform_error_profile, zero_count, TransformFile};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn int_tensor(dims: [usize; 4], r: &mut impl Rng) -> Tensor4<Rational> {
    Tensor4::from_fn(dims, |_| rat(r.random_range(-9..=9), 1))
}

fn c1_exact_equivalence() -> Outcome {
    const TRIALS: usize = 1000;
    for (m, r) in [(2, 3), (4, 3), (6, 3), (2, 5), (4, 5), (6, 5)] {
        let tf = default_transform(m, r).map_err(|e| e.to_string())?;
        let mut g = rng(1000 + 10 * m as u64 + r as u64);
        for trial in 0..TRIALS {
            // Odd sizes and both paddings so partial edge tiles are covered.
            let pad = if trial % 2 == 0 { 0 } else { r / 2 };
            let lo = r.saturating_sub(2 * pad).max(1);
            let (h, w) = (g.random_range(lo..=lo + 2 * m), g.random_range(lo..=lo + 2 * m));
            let (c, o) = (g.random_range(1..=2), g.random_range(1..=2));
            let shape = ConvShape::new(c, o, h, w, r, 1, pad).map_err(|e| e.to_string())?;
            let x = int_tensor([1, c, h, w], &mut g);
            let k = int_tensor([o, c, r, r], &mut g);
            let y = conv2d_winograd(&x, &k, &tf, &shape, &QSpec::float32()).map_err(|e| e.to_string())?;
            let d = conv2d_direct(&x, &k, &shape).map_err(|e| e.to_string())?;
            if y != d {
                return Err(format!("F({m},{r}) differs on trial {trial} ({h}x{w}, pad {pad})"));
            }
        }
    }
    Ok(format!("{TRIALS} integer tensors x 6 configs, all equal"))
}

fn c2_mult_counts() -> Outcome {
    let valid32 = ConvShape::new(1, 1, 32, 32, 3, 1, 0).unwrap();
    let direct = count_mults(ConvAlgo::Direct, &valid32).unwrap();
    let wg2 = count_mults(ConvAlgo::Winograd(2), &valid32).unwrap();
    // 30x30 outputs: 9 products each directly, 15x15 tiles of 4x4 products.
    let (d_ref, w_ref) = (30 * 30 * 9, 15 * 15 * 16);
    let valid34 = ConvShape::new(1, 1, 34, 34, 3, 1, 0).unwrap();
    let mpo: Vec<Rational> = [ConvAlgo::Direct, ConvAlgo::Winograd(2), ConvAlgo::Winograd(4)]
        .iter()
        .map(|&a| mults_per_output(a, &valid34).unwrap())
        .collect();
    let mpo_ref = [rat(9, 1), rat(4, 1), rat(9, 4)];
    let formula = [2, 4].map(|m| winoq::transforms::mults_per_output(m, 3));
    ensure(
        direct == d_ref && wg2 == w_ref && direct == 8100 && wg2 == 3600 && mpo == mpo_ref && formula == [rat(4, 1), rat(9, 4)],
        format!("direct {direct}, F2 {wg2}, per output {} / {} / {}", mpo[0], mpo[1], mpo[2]),
    )
}

fn c3_sparsity() -> Outcome {
    let tf = default_transform(2, 3).unwrap();
    let ratio = |(z, n): (usize, usize)| rat(z as i64, n as i64);
    let got = [ratio(zero_count(&tf.bt)), ratio(zero_count(&tf.g)), ratio(zero_count(&tf.at))];
    ensure(got == [rat(1, 2), rat(1, 3), rat(1, 4)], format!("Bt {} G {} At {}", got[0], got[1], got[2]))
}

fn c4_memory_ratio() -> Outcome {
    let w = Tensor4::<Rational>::from_fn([2, 3, 3, 3], |_| rat(1, 1));
    let mut got = Vec::new();
    for m in [2, 4] {
        let u = filter_transform(&w, &default_transform(m, 3).unwrap()).unwrap();
        let measured = rat(u.data.len() as i64, w.len() as i64);
        if measured != u.memory_ratio(3) {
            return Err(format!("F{m}: storage {measured} but model says {}", u.memory_ratio(3)));
        }
        got.push(measured);
    }
    ensure(got == [rat(16, 9), rat(4, 1)], format!("F2 {} F4 {}", got[0], got[1]))
}

fn c5_gradients() -> Outcome {
    let errs = gradcheck::all();
    let (worst, e) = errs.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let bad: Vec<_> = errs.iter().filter(|(_, e)| !(*e <= gradcheck::TOL)).map(|(n, e)| format!("{n}={e:.1e}")).collect();
    ensure(bad.is_empty(), format!("{} gradients, worst {worst} at {e:.2e}; {}", errs.len(), bad.join(" ")))
}

fn c6_error_ordering() -> Outcome {
    let mean = |m: usize, bits: Bits| transform_error_profile(&default_transform(m, 3).unwrap().to_f64(), bits, 1000, 42).unwrap().mean;
    let int8: Vec<f64> = [2, 4, 6].iter().map(|&m| mean(m, Bits::Int(8))).collect();
    let fp32: Vec<f64> = [2, 4, 6].iter().map(|&m| mean(m, Bits::Float32)).collect();
    ensure(
        int8[0] < int8[1] && int8[1] < int8[2] && int8.iter().zip(&fp32).all(|(a, b)| a > b),
        format!(
            "INT8 {:.2e} < {:.2e} < {:.2e}; FP32 {:.1e} {:.1e} {:.1e}",
            int8[0], int8[1], int8[2], fp32[0], fp32[1], fp32[2]
        ),
    )
}

fn desk_data() -> (Dataset, Dataset) {
    gen_synthetic(4, 256, 16, 1).unwrap().split(0.1, 1)
}

fn micro(algo: ConvAlgo, bits: QSpec, flex: bool) -> ModelSpec {
    presets::micro_resnet(&PresetOpts { algo, bits, flex, size: 16, ..PresetOpts::default() })
}

fn trained(spec: &ModelSpec, seed: u64, tr: &Dataset, va: &Dataset) -> (Model, f64) {
    let mut m = Model::build(spec, seed).unwrap();
    let rep = train(&mut m, tr, va, &TrainConfig { epochs: 10, seed, ..TrainConfig::default() }).unwrap();
    (m, rep.final_val_acc().unwrap())
}

fn c7_swap_collapse() -> Outcome {
    let (tr, va) = desk_data();
    let int8 = QSpec::int(8);
    let (mut base, mut swapped, mut f2, mut f4s, mut f4f) = (vec![], vec![], vec![], vec![], vec![]);
    for seed in SEEDS {
        let (mut direct, acc) = trained(&micro(ConvAlgo::Direct, int8, false), seed, &tr, &va);
        base.push(acc);
        let cfg = TrainConfig { epochs: 0, seed, ..TrainConfig::default() };
        let (_, rep) = adapt(&mut direct, ConvAlgo::Winograd(4), int8, false, &tr, &va, &cfg).unwrap();
        swapped.push(rep.warmup_acc);
        f2.push(trained(&micro(ConvAlgo::Winograd(2), int8, false), seed, &tr, &va).1);
        f4s.push(trained(&micro(ConvAlgo::Winograd(4), int8, false), seed, &tr, &va).1);
        f4f.push(trained(&micro(ConvAlgo::Winograd(4), int8, true), seed, &tr, &va).1);
    }
    let (b, s, w2, st, fl) = (median(base), median(swapped), median(f2), median(f4s), median(f4f));
    let checks = [b >= 0.90, b - s >= 0.15, b - w2 <= 0.02, fl >= st];
    ensure(
        checks.iter().all(|&c| c),
        format!(
            "(a) direct INT8 {} (b) swapped to F4 {} (c) WA F2 {} (d) F4 flex {} vs static {}; {:?}",
            pct(b),
            pct(s),
            pct(w2),
            pct(fl),
            pct(st),
            checks
        ),
    )
}

fn c8_adaptation() -> Outcome {
    let (tr, va) = desk_data();
    let int8 = QSpec::int(8);
    let (mut fp_ok, mut fp_detail) = (true, Vec::new());
    let (mut st, mut fl) = (vec![], vec![]);
    for seed in SEEDS {
        let (mut src, _) = trained(&micro(ConvAlgo::Direct, QSpec::float32(), false), seed, &tr, &va);
        let one = TrainConfig { epochs: 1, seed, ..TrainConfig::default() };
        let (_, rep) = adapt(&mut src, ConvAlgo::Winograd(4), QSpec::float32(), false, &tr, &va, &one).unwrap();
        let fin = rep.train.final_val_acc().unwrap();
        fp_ok &= fin >= rep.source_acc - 0.005;
        fp_detail.push(format!("{}->{}", pct(rep.source_acc), pct(fin)));
        let budget = TrainConfig { epochs: 10, seed, ..TrainConfig::default() };
        for (flex, out) in [(false, &mut st), (true, &mut fl)] {
            let (_, rep) = adapt(&mut src, ConvAlgo::Winograd(4), int8, flex, &tr, &va, &budget).unwrap();
            out.push(rep.train.final_val_acc().unwrap());
        }
    }
    let (s, f) = (median(st), median(fl));
    ensure(
        fp_ok && f > s,
        format!("FP32 F4 after 1 epoch {}; INT8 F4 after 10 epochs flex {} vs static {}", fp_detail.join(" "), pct(f), pct(s)),
    )
}

fn search_setup(per_class: usize) -> (ModelSpec, SearchSpace, LatencyTable, Dataset, Dataset) {
    let spec = presets::search_net(&PresetOpts { algo: ConvAlgo::Im2row, bits: QSpec::int(8), size: 12, ..PresetOpts::default() });
    let space = SearchSpace::wa_q();
    let shapes: Vec<ConvShape> = searchable_shapes(&spec).unwrap().into_iter().map(|(_, s)| s).collect();
    let table = analytic_table_for(&shapes, &space.algos, &[32, 16, 8], 1.0).unwrap();
    let (tr, va) = gen_synthetic(4, per_class, 12, 1).unwrap().split(0.1, 1);
    (spec, space, table, tr, va)
}

fn c9_search() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // (a) argmin oracle: scan the table rows for each searchable layer.
    let (spec, space, table, tr, va) = search_setup(256);
    let shapes = searchable_shapes(&spec).unwrap();
    assert_eq!(shapes.len(), 3);
    let oracle: Vec<(String, ConvAlgo, u32)> = shapes
        .iter()
        .map(|(name, s)| {
            let (oh, ow) = s.out_hw().unwrap();
            let best = table
                .rows
                .iter()
                .filter(|r| r.out_h == oh && r.out_w == ow && r.in_ch == s.in_ch && r.out_ch == s.out_ch)
                .min_by(|a, b| a.median_ms.total_cmp(&b.median_ms))
                .unwrap();
            (name.clone(), best.algo, best.bits)
        })
        .collect();
    let mut smoke_s: f64 = 0.0;
    let mut exact = 0;
    for seed in SEEDS {
        let cfg = SearchConfig { epochs: 10, lambda2: 1e3, seed, ..SearchConfig::default() };
        let t = Instant::now();
        let res = search(&spec, &space, &table, &cfg, &tr, &va).unwrap();
        smoke_s = smoke_s.max(t.elapsed().as_secs_f64());
        let got: Vec<(String, ConvAlgo, u32)> = res
            .arch
            .layers
            .iter()
            .filter(|l| shapes.iter().any(|(n, _)| *n == l.name))
            .map(|l| (l.name.clone(), l.algo, l.bits))
            .collect();
        exact += usize::from(got == oracle);
    }
    ok &= exact == SEEDS.len() && smoke_s < 600.0;
    notes.push(format!("(a) argmin {}/{} seeds, 10-epoch run {smoke_s:.0}s", exact, SEEDS.len()));

    // (b) latency pressure.
    let (spec, space, table, tr, va) = search_setup(64);
    let lat = |l2: f64| {
        median(
            SEEDS
                .iter()
                .map(|&seed| {
                    let cfg = SearchConfig { epochs: 10, lambda2: l2, seed, ..SearchConfig::default() };
                    search(&spec, &space, &table, &cfg, &tr, &va).unwrap().arch.expected_latency_ms
                })
                .collect(),
        )
    };
    let (l01, l0) = (lat(0.1), lat(0.0));
    ok &= l01 <= l0;
    notes.push(format!("(b) λ2=0.1 {l01:.4}ms vs λ2=0 {l0:.4}ms"));

    // (c) expected-latency gradient against central differences.
    let mut g = rng(9);
    let lats: Vec<Vec<f64>> = (0..3).map(|_| (0..12).map(|_| g.random_range(0.01..1.0)).collect()).collect();
    let alphas: Vec<Vec<f64>> = (0..3).map(|_| (0..12).map(|_| g.random_range(-2.0..2.0)).collect()).collect();
    let (_, grads) = expected_latency(&alphas, &lats).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..3 {
        let fd = central_diff(&alphas[l], 1e-5, |a| {
            let mut al = alphas.clone();
            al[l] = a.to_vec();
            expected_latency(&al, &lats).unwrap().0
        });
        worst = worst.max(rel_inf(&grads[l], &fd));
    }
    ok &= worst <= 1e-6;
    notes.push(format!("(c) FD rel err {worst:.1e}"));

    // (d) only sampled logits move during an arch step.
    let mut model = build_supernet(&spec, &space, &table, 3, false).unwrap();
    let mut searcher = Searcher::new(SearchConfig { lambda2: 0.1, ..SearchConfig::default() }, 0.05);
    let alphas_of = |m: &Model| -> Vec<(Vec<f64>, Vec<usize>)> {
        m.nodes
            .iter()
            .filter_map(|n| match &n.layer {
                Layer::Mixed(op) => Some((op.alpha.value.clone(), op.active.clone())),
                _ => None,
            })
            .collect()
    };
    let (mut touched_only_sampled, mut steps_moved) = (true, 0);
    for step in 0..20 {
        let idx: Vec<usize> = (0..16).map(|i| (step * 16 + i) % va.len().max(1)).collect();
        let (x, y) = va.batch(&idx).unwrap();
        let before = alphas_of(&model);
        searcher.weight_step(&mut model, &x, &y).unwrap();
        touched_only_sampled &= alphas_of(&model).iter().zip(&before).all(|(a, b)| a.0 == b.0);
        let before = alphas_of(&model);
        searcher.arch_step(&mut model, &x, &y).unwrap();
        for ((after, active), (prev, _)) in alphas_of(&model).iter().zip(&before) {
            for i in 0..after.len() {
                let moved = after[i].to_bits() != prev[i].to_bits();
                if moved && !active.contains(&i) {
                    touched_only_sampled = false;
                }
                steps_moved += usize::from(moved);
            }
        }
    }
    ok &= touched_only_sampled && steps_moved > 0;
    notes.push(format!("(d) unsampled untouched: {touched_only_sampled}"));
    ensure(ok, notes.join("; "))
}

fn cli_binary() -> Result<PathBuf, String> {
    let exe = std::env::current_exe().map_err(|e| e.to_string())?;
    let profile_dir = exe.parent().and_then(Path::parent).ok_or("unexpected test binary location")?;
    let bin = profile_dir.join(format!("winoq{}", std::env::consts::EXE_SUFFIX));
    if !bin.exists() {
        let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
        let mut cmd = Command::new(cargo);
        cmd.args(["build", "-p", "winoq-cli", "--bin", "winoq"]);
        if profile_dir.ends_with("release") {
            cmd.arg("--release");
        }
        let st = cmd.status().map_err(|e| e.to_string())?;
        if !st.success() || !bin.exists() {
            return Err("could not build the winoq binary".into());
        }
    }
    Ok(bin)
}

/// Runs each invocation twice in fresh directories and compares the named
/// outputs byte for byte.
fn cli_deterministic(bin: &Path, runs: &[(&[&str], &str)]) -> Result<usize, String> {
    let mut compared = 0;
    for (args, out) in runs {
        let mut bytes = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let st = Command::new(bin)
                .current_dir(dir.path())
                .args(args.iter())
                .output()
                .map_err(|e| e.to_string())?;
            if !st.status.success() {
                return Err(format!("winoq {args:?}: {}", String::from_utf8_lossy(&st.stderr)));
            }
            bytes.push(std::fs::read(dir.path().join(out)).map_err(|e| e.to_string())?);
        }
        if bytes[0] != bytes[1] {
            return Err(format!("winoq {} output {out} differs between runs", args[0]));
        }
        compared += 1;
    }
    Ok(compared)
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn c10_serialization() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();

    for (m, r) in [(2, 3), (4, 3), (6, 3), (4, 5)] {
        let tf = default_transform(m, r).unwrap();
        let p = dir.path().join(format!("f{m}{r}.json"));
        TransformFile::Exact(tf.clone()).save(&p).unwrap();
        let TransformFile::Exact(back) = TransformFile::load(&p).unwrap() else {
            return Err("exact transform came back as float".into());
        };
        let f = tf.to_f64();
        TransformFile::Float(f.clone()).save(&p).unwrap();
        let TransformFile::Float(fb) = TransformFile::load(&p).unwrap() else {
            return Err("float transform came back as exact".into());
        };
        if back != tf || !same_bits(fb.g.data(), f.g.data()) || !same_bits(fb.bt.data(), f.bt.data()) || !same_bits(fb.at.data(), f.at.data()) {
            return Err(format!("F({m},{r}) transform JSON did not round-trip"));
        }
    }
    notes.push("transforms".to_string());

    // A flex INT8 model with trained transforms, observers and BN statistics.
    let (tr, va) = gen_synthetic(4, 16, 8, 2).unwrap().split(0.25, 2);
    let spec = presets::micro_resnet(&PresetOpts { algo: ConvAlgo::Winograd(4), bits: QSpec::int(8), flex: true, size: 8, ..PresetOpts::default() });
    let mut model = Model::build(&spec, 5).unwrap();
    train(&mut model, &tr, &va, &TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::default() }).unwrap();
    let ck = dir.path().join("ckpt");
    checkpoint::save(&model, &ck).unwrap();
    let mut loaded = checkpoint::load(&ck).unwrap();
    let params_equal = model.params().len() == loaded.params().len()
        && model.params().iter().zip(loaded.params()).all(|(a, b)| a.name == b.name && same_bits(&a.value, &b.value));
    let (x, _) = va.batch(&(0..va.len()).collect::<Vec<_>>()).unwrap();
    let (ya, _) = model.clone().forward(&x, Mode::Eval).unwrap();
    let (yb, _) = loaded.forward(&x, Mode::Eval).unwrap();
    let acc_equal = evaluate(&mut model, &va, 8).unwrap().1.to_bits() == evaluate(&mut loaded, &va, 8).unwrap().1.to_bits();
    if !(params_equal && same_bits(ya.data(), yb.data()) && acc_equal) {
        return Err("checkpoint did not round-trip".into());
    }
    notes.push("checkpoint".to_string());

    let mut g = rng(10);
    let mut table = LatencyTable::default();
    for (i, algo) in [ConvAlgo::Im2row, ConvAlgo::Im2col, ConvAlgo::Winograd(2), ConvAlgo::Winograd(6)].into_iter().enumerate() {
        let v: f64 = g.random::<f64>() * 10f64.powi(g.random_range(-6..3));
        table.insert(LatencyRow {
            algo,
            out_h: 7 + i,
            out_w: 7 + i,
            in_ch: 3,
            out_ch: 8,
            bits: [32, 16, 8, 8][i],
            median_ms: v,
            min_ms: v * (1.0 - 1e-3),
            max_ms: v * std::f64::consts::PI,
            transform_fraction: algo.is_winograd().then(|| g.random()),
            samples: Vec::new(),
        });
    }
    let back = LatencyTable::from_csv_str(&table.to_csv_string().unwrap()).unwrap();
    let row_bits = |r: &LatencyRow| (r.algo, r.out_h, r.out_w, r.in_ch, r.out_ch, r.bits, r.median_ms.to_bits(), r.min_ms.to_bits(), r.max_ms.to_bits(), r.transform_fraction.map(f64::to_bits));
    if table.rows.iter().map(row_bits).ne(back.rows.iter().map(row_bits)) {
        return Err("latency CSV did not round-trip".into());
    }
    notes.push("latency CSV".to_string());

    let (sspec, space, stable, str_, sva) = search_setup(8);
    let arch = search(&sspec, &space, &stable, &SearchConfig { epochs: 1, ..SearchConfig::default() }, &str_, &sva).unwrap().arch;
    let arch = DerivedArch { expected_latency_ms: arch.expected_latency_ms + 1.0 / 3.0, ..arch };
    let back = DerivedArch::from_json(&arch.to_json().unwrap()).unwrap();
    if back != arch || back.expected_latency_ms.to_bits() != arch.expected_latency_ms.to_bits() {
        return Err("derived architecture JSON did not round-trip".into());
    }
    notes.push("derived arch".to_string());

    let bin = cli_binary()?;
    let n = cli_deterministic(
        &bin,
        &[
            (&["gen-transforms", "--m", "4", "--r", "3", "--out", "t.json"], "t.json"),
            (&["gen-transforms", "--m", "4", "--r", "3", "--out", "t.json", "--float"], "t.json"),
            (&["bench", "--preset", "paper-sweep", "--mode", "analytic", "--out", "lat.csv"], "lat.csv"),
            (&["search", "--space", "wa-q", "--lambda2", "0.1", "--epochs", "2", "--per-class", "16", "--size", "8", "--seed", "7", "--out", "arch.json"], "arch.json"),
        ],
    )?;
    notes.push(format!("CLI byte-identical on {n} analytic invocations"));
    Ok(notes.join(", "))
}

const CRITERIA: [(u32, &str, fn() -> Outcome); 10] = [
    (1, "exact Winograd equivalence", c1_exact_equivalence),
    (2, "multiplication counts", c2_mult_counts),
    (3, "default-transform sparsity", c3_sparsity),
    (4, "memory ratio", c4_memory_ratio),
    (5, "gradient suite", c5_gradients),
    (6, "quantized error ordering", c6_error_ordering),
    (7, "post-hoc swap collapse vs Winograd-aware training", c7_swap_collapse),
    (8, "adaptation", c8_adaptation),
    (9, "search properties", c9_search),
    (10, "serialization and CLI determinism", c10_serialization),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} [{id:>2}] {name}: {detail} ({:.1}s)", t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
