use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use winoq::bench::{build_table, BenchConfig, BenchMode, LatencyTable};
use winoq::conv::{ConvAlgo, ConvShape, CostModel};
use winoq::data::{gen_synthetic, load_cifar10_bin, load_mnist_idx, resolve_data_path, Dataset};
use winoq::nas::{search, DerivedArch, SearchConfig, SearchSpace};
use winoq::quant::{Bits, QSpec};
use winoq::train::checkpoint;
use winoq::train::model::{LayerSpec, ModelSpec};
use winoq::train::presets::{self, PresetOpts};
use winoq::train::{adapt, evaluate, train, warmup, Model, OptimKind, Schedule, TrainConfig, TrainReport};
use winoq::transforms::{cook_toom_1d, transform_error_profile, PolyPoints, TransformFile};
use winoq::{Error, Result};

mod manifest;

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "winoq", version, about = "Winograd-aware quantized convolution toolkit")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build a Cook-Toom transform triple and write it as JSON.
    GenTransforms(GenArgs),
    /// Per-trial relative error of quantized single-tile Winograd.
    CheckError(CheckArgs),
    /// Build a latency table (measured or analytic).
    Bench(BenchArgs),
    /// Train a model preset and write a checkpoint directory.
    Train(TrainArgs),
    /// Re-target a trained checkpoint to a Winograd algorithm and fine-tune.
    Adapt(AdaptArgs),
    /// Search per-layer algorithms against a latency table.
    Search(SearchArgs),
    /// Evaluate a checkpoint, optionally after swapping its algorithm.
    Eval(EvalArgs),
    /// Collate training runs and a latency table into one summary.
    ExportReport(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    r: usize,
    /// Comma-separated points, e.g. "0,1,-1,1/2,inf" (default set otherwise).
    #[arg(long)]
    points: Option<String>,
    /// Store float64 matrices instead of exact rationals.
    #[arg(long)]
    float: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CheckArgs {
    /// Transform JSON written by gen-transforms.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    /// paper-sweep or desk.
    #[arg(long, default_value = "desk")]
    preset: String,
    /// measured or analytic.
    #[arg(long, default_value = "analytic")]
    mode: String,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    cooldown_ms: u64,
    /// Let the kernels use every worker thread.
    #[arg(long)]
    multi_thread: bool,
    /// Comma-separated bit widths overriding the preset.
    #[arg(long)]
    bits: Option<String>,
    /// Start from scratch even if the output table exists.
    #[arg(long)]
    fresh: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct DataArgs {
    /// synthetic, mnist or cifar.
    #[arg(long, default_value = "synthetic")]
    data: String,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 256)]
    per_class: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    /// IDX image file (mnist); relative paths also resolve under WINOQ_DATA_DIR.
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (mnist).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// CIFAR-10 binary batch (cifar).
    #[arg(long)]
    cifar: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
struct OptArgs {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// adam or sgd.
    #[arg(long, default_value = "adam")]
    optimizer: String,
    /// cosine or constant.
    #[arg(long, default_value = "cosine")]
    schedule: String,
    /// λ0 of the L2 penalty.
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Include transform matrices in the L2 penalty.
    #[arg(long)]
    l2_transforms: bool,
    /// Learning-rate multiplier for learnable transforms.
    #[arg(long, default_value_t = 10.0)]
    transform_lr_mult: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// Preset: micro-resnet, lenet-q, tiny, search-net.
    #[arg(long, default_value = "micro-resnet")]
    model: String,
    /// direct, im2row, im2col, wa-f2, wa-f4, wa-f6.
    #[arg(long, default_value = "direct")]
    algo: String,
    #[arg(long)]
    flex: bool,
    #[arg(long, default_value_t = 32)]
    bits: u32,
    #[arg(long, default_value_t = 1)]
    width: usize,
    /// Derived architecture JSON from `search`, applied to the preset.
    #[arg(long)]
    arch: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AdaptArgs {
    /// Checkpoint directory of the source model.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    algo: String,
    #[arg(long)]
    flex: bool,
    #[arg(long, default_value_t = 32)]
    bits: u32,
    #[command(flatten)]
    opt: OptArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SearchArgs {
    /// wa (one global bit width) or wa-q (FLOAT32/INT16/INT8 per layer).
    #[arg(long, default_value = "wa")]
    space: String,
    /// Bit width of the wa space and of non-searchable layers.
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value = "search-net")]
    model: String,
    #[arg(long, default_value_t = 1)]
    width: usize,
    /// Latency table CSV; analytic latencies are used when absent.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda2: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    weight_lr: f64,
    #[arg(long, default_value_t = 0.05)]
    arch_lr: f64,
    /// Share raw filters across the candidates of a layer.
    #[arg(long)]
    share_weights: bool,
    /// Use the training split for architecture steps.
    #[arg(long)]
    arch_on_train: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Swap every non-input convolution to this algorithm first.
    #[arg(long)]
    swap_algo: Option<String>,
    /// Bit width after the swap (defaults to the checkpoint's).
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Write the result as JSON here (stdout only otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    /// Checkpoint directories written by train or adapt.
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    /// Latency table; analytic latencies when absent.
    #[arg(long)]
    table: Option<PathBuf>,
    /// check-error CSVs to summarize.
    #[arg(long = "check-error")]
    check_error: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_algo(s: &str) -> Result<ConvAlgo> {
    s.parse()
}

fn qspec(bits: u32) -> Result<QSpec> {
    Ok(QSpec::new(Bits::from_u32(bits)?))
}

fn load_data(d: &DataArgs) -> Result<(Dataset, Dataset)> {
    let ds = match d.data.as_str() {
        "synthetic" => gen_synthetic(d.classes, d.per_class, d.size, d.data_seed)?,
        "mnist" => {
            let images = d.images.clone().unwrap_or_else(|| "train-images-idx3-ubyte".into());
            let labels = d.labels.clone().unwrap_or_else(|| "train-labels-idx1-ubyte".into());
            load_mnist_idx(&resolve_data_path(&images), &resolve_data_path(&labels))?
        }
        "cifar" => {
            let path = d.cifar.clone().unwrap_or_else(|| "data_batch_1.bin".into());
            load_cifar10_bin(&resolve_data_path(&path))?
        }
        other => return Err(Error::Config(format!("unknown dataset {other:?} (synthetic, mnist, cifar)"))),
    };
    Ok(ds.split(d.val_fraction, d.data_seed))
}

fn train_config(o: &OptArgs) -> Result<TrainConfig> {
    let optimizer = match o.optimizer.as_str() {
        "adam" => OptimKind::adam(),
        "sgd" => OptimKind::sgd(),
        other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
    };
    let schedule = match o.schedule.as_str() {
        "cosine" => Schedule::Cosine,
        "constant" => Schedule::Constant,
        other => return Err(Error::Config(format!("unknown schedule {other:?}"))),
    };
    Ok(TrainConfig {
        epochs: o.epochs,
        batch_size: o.batch_size,
        lr: o.lr,
        optimizer,
        schedule,
        weight_decay: o.weight_decay,
        l2_transforms: o.l2_transforms,
        transform_lr_mult: o.transform_lr_mult,
        seed: o.seed,
    })
}

fn preset(name: &str, opts: &PresetOpts) -> Result<ModelSpec> {
    presets::by_name(name, opts)
        .ok_or_else(|| Error::Config(format!("unknown model {name:?} (one of {})", presets::NAMES.join(", "))))
}

const DATA_FILE: &str = "data.json";
const REPORT_FILE: &str = "train.csv";

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn save_run(model: &Model, report: &TrainReport, data: &DataArgs, dir: &Path) -> Result<Vec<PathBuf>> {
    checkpoint::save(model, dir)?;
    report.save_csv(&dir.join(REPORT_FILE))?;
    write_json(&dir.join(DATA_FILE), data)?;
    Ok(vec![dir.join(checkpoint::MANIFEST), dir.join(REPORT_FILE), dir.join(DATA_FILE)])
}

fn load_run_data(dir: &Path) -> Result<DataArgs> {
    Ok(serde_json::from_str(&winoq::read_text(&dir.join(DATA_FILE))?)?)
}

fn cmd_gen(a: &GenArgs) -> Result<Vec<PathBuf>> {
    let points = match &a.points {
        Some(p) => PolyPoints::parse(p)?,
        None => winoq::transforms::default_points(a.m, a.r)?,
    };
    let tf = cook_toom_1d(a.m, a.r, &points)?;
    let file = if a.float { TransformFile::Float(tf.to_f64()) } else { TransformFile::Exact(tf) };
    file.save(&a.out)?;
    Ok(vec![a.out.clone()])
}

fn cmd_check(a: &CheckArgs) -> Result<Vec<PathBuf>> {
    let tf = TransformFile::load(&a.config)?.to_f64();
    let stats = transform_error_profile(&tf, Bits::from_u32(a.bits)?, a.trials, a.seed)?;
    let mut text = String::from("trial,rel_err\n");
    for (i, e) in stats.per_trial.iter().enumerate() {
        text.push_str(&format!("{i},{e}\n"));
    }
    std::fs::write(&a.csv, text)?;
    println!("F({}x{},{}x{}) bits={} mean={:e} p95={:e} max={:e}", tf.m, tf.m, tf.r, tf.r, a.bits, stats.mean, stats.p95, stats.max);
    Ok(vec![a.csv.clone()])
}

fn cmd_bench(a: &BenchArgs) -> Result<Vec<PathBuf>> {
    let mut cfg = BenchConfig::preset(&a.preset)?;
    cfg.mode = a.mode.parse::<BenchMode>()?;
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    if let Some(b) = &a.bits {
        cfg.bits = b
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad bit width {s:?}"))))
            .collect::<Result<_>>()?;
    }
    cfg.cooldown_ms = a.cooldown_ms;
    cfg.single_thread = !a.multi_thread;
    cfg.seed = a.seed;
    let mut table = if a.out.exists() && !a.fresh { LatencyTable::load(&a.out)? } else { LatencyTable::default() };
    let out = a.out.clone();
    let outcome = build_table(&cfg, &mut table, |t| t.save(&out))?;
    table.save(&a.out)?;
    for s in &outcome.skipped {
        log::warn!("skipped {s}");
    }
    println!("{} rows ({} new, {} reused, {} skipped)", table.len(), outcome.measured, outcome.reused, outcome.skipped.len());
    Ok(vec![a.out.clone()])
}

fn cmd_train(a: &TrainArgs) -> Result<Vec<PathBuf>> {
    let (tr, va) = load_data(&a.data)?;
    let opts = PresetOpts {
        algo: parse_algo(&a.algo)?,
        bits: qspec(a.bits)?,
        flex: a.flex,
        in_ch: tr.dims[0],
        size: tr.dims[1],
        classes: tr.classes,
        width: a.width,
    };
    let mut spec = preset(&a.model, &opts)?;
    if let Some(p) = &a.arch {
        spec = DerivedArch::from_json(&winoq::read_text(&p)?)?.apply(&spec)?;
    }
    let cfg = train_config(&a.opt)?;
    let mut model = Model::build(&spec, cfg.seed)?;
    let report = train(&mut model, &tr, &va, &cfg)?;
    if let Some(acc) = report.final_val_acc() {
        println!("final val acc {acc:.4}");
    }
    save_run(&model, &report, &a.data, &a.out)
}

fn cmd_adapt(a: &AdaptArgs) -> Result<Vec<PathBuf>> {
    let data = load_run_data(&a.ckpt)?;
    let (tr, va) = load_data(&data)?;
    let mut src = checkpoint::load(&a.ckpt)?;
    let cfg = train_config(&a.opt)?;
    let (model, rep) = adapt(&mut src, parse_algo(&a.algo)?, qspec(a.bits)?, a.flex, &tr, &va, &cfg)?;
    println!(
        "source {:.4} after warmup {:.4} final {:.4}",
        rep.source_acc,
        rep.warmup_acc,
        rep.train.final_val_acc().unwrap_or(rep.warmup_acc)
    );
    let mut outs = save_run(&model, &rep.train, &data, &a.out)?;
    let summary = a.out.join("adapt.json");
    write_json(&summary, &rep)?;
    outs.push(summary);
    Ok(outs)
}

fn cmd_search(a: &SearchArgs) -> Result<Vec<PathBuf>> {
    let bits = Bits::from_u32(a.bits)?;
    let space = SearchSpace::parse(&a.space, bits)?;
    let (tr, va) = load_data(&a.data)?;
    let opts = PresetOpts {
        algo: ConvAlgo::Im2row,
        bits: QSpec::new(bits),
        flex: false,
        in_ch: tr.dims[0],
        size: tr.dims[1],
        classes: tr.classes,
        width: a.width,
    };
    let spec = preset(&a.model, &opts)?;
    let table = match &a.table {
        Some(p) => LatencyTable::load(p)?,
        None => {
            let shapes: Vec<ConvShape> = winoq::nas::searchable_shapes(&spec)?.into_iter().map(|(_, s)| s).collect();
            let bit_list: Vec<u32> = space.bits.iter().map(|b| b.as_u32()).chain([a.bits]).collect();
            winoq::bench::analytic_table_for(&shapes, &space.algos, &bit_list, 1.0)?
        }
    };
    let cfg = SearchConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        weight_lr: a.weight_lr,
        arch_lr: a.arch_lr,
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        arch_on_val: !a.arch_on_train,
        share_weights: a.share_weights,
        seed: a.seed,
        ..SearchConfig::default()
    };
    let res = search(&spec, &space, &table, &cfg, &tr, &va)?;
    std::fs::write(&a.out, res.arch.to_json()? + "\n")?;
    for l in &res.arch.layers {
        println!("{:<8} {:<7} {}", l.name, l.algo.name(), l.bits);
    }
    println!("latency {:.6} ms, {} parameters", res.arch.expected_latency_ms, res.arch.param_count);
    Ok(vec![a.out.clone()])
}

fn cmd_eval(a: &EvalArgs) -> Result<Vec<PathBuf>> {
    let data = load_run_data(&a.ckpt)?;
    let (tr, va) = load_data(&data)?;
    let mut model = checkpoint::load(&a.ckpt)?;
    let bits = model.spec.conv_specs().next().map(|c| c.bits.bits.as_u32()).unwrap_or(32);
    let bits = a.bits.unwrap_or(bits);
    let (swapped, label) = match &a.swap_algo {
        Some(s) => {
            let algo = parse_algo(s)?;
            let spec = model.spec.retarget(algo, qspec(bits)?, false);
            let mut m = Model::build(&spec, 0)?;
            m.load_state_from(&model);
            warmup(&mut m, &tr, a.batch_size)?;
            (m, format!("{} at {} bits", algo.name(), bits))
        }
        None => (model.clone(), "as trained".to_string()),
    };
    model = swapped;
    let (loss, acc) = evaluate(&mut model, &va, a.batch_size)?;
    println!("{label}: val acc {acc:.4} loss {loss:.4}");
    if let Some(out) = &a.out {
        write_json(out, &json!({"model": model.spec.name, "variant": label, "val_acc": acc, "val_loss": loss}))?;
        return Ok(vec![out.clone()]);
    }
    Ok(Vec::new())
}

/// Latency of every convolution of `spec` under its own algorithm and bits,
/// and under im2row at the same bits.
fn model_latency(spec: &ModelSpec, table: Option<&LatencyTable>) -> Result<(f64, f64)> {
    let model = Model::build(spec, 0)?;
    let cm = CostModel::default();
    let (mut own, mut base) = (0.0, 0.0);
    for (node, ls) in model.nodes.iter().zip(&spec.layers) {
        let LayerSpec::Conv(c) = ls else { continue };
        let shape = ConvShape {
            in_ch: c.in_ch,
            out_ch: c.out_ch,
            in_h: node.in_dims[2],
            in_w: node.in_dims[3],
            k: c.k,
            stride: c.stride,
            pad: c.pad,
        };
        let bits = c.bits.bits.as_u32();
        let algo = if c.algo == ConvAlgo::Direct { ConvAlgo::Im2row } else { c.algo };
        let lat = |a: ConvAlgo| match table {
            Some(t) => t.lookup(a, &shape, bits),
            None => cm.latency_ms(a, &shape, bits),
        };
        own += lat(algo)?;
        base += lat(ConvAlgo::Im2row)?;
    }
    Ok((own, base))
}

fn cmd_report(a: &ReportArgs) -> Result<Vec<PathBuf>> {
    let table = a.table.as_deref().map(LatencyTable::load).transpose()?;
    let mut rows = Vec::new();
    for dir in &a.runs {
        let model = checkpoint::load(dir)?;
        let report = TrainReport::load_csv(&dir.join(REPORT_FILE))?;
        let (lat, base) = model_latency(&model.spec, table.as_ref())?;
        let algos: Vec<String> = model.spec.conv_specs().map(|c| c.algo.name()).collect();
        let bits: Vec<u32> = model.spec.conv_specs().map(|c| c.bits.bits.as_u32()).collect();
        let flex = model.spec.conv_specs().any(|c| c.flex);
        rows.push(json!({
            "run": dir.display().to_string(),
            "model": model.spec.name,
            "algo": algos,
            "flex": flex,
            "bits": bits,
            "accuracy": report.final_val_acc(),
            "latency_ms": lat,
            "speedup_vs_im2row": if lat > 0.0 { base / lat } else { 0.0 },
        }));
    }
    let mut errors = BTreeMap::new();
    for p in &a.check_error {
        let text = winoq::read_text(&p)?;
        let vals: Vec<f64> = text
            .lines()
            .skip(1)
            .filter_map(|l| l.split(',').nth(1))
            .map(|v| v.parse().map_err(|_| Error::Format(format!("bad value {v:?} in {}", p.display()))))
            .collect::<Result<_>>()?;
        let mean = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        errors.insert(p.display().to_string(), json!({"trials": vals.len(), "mean_rel_err": mean}));
    }
    let summary: Value = json!({
        "latency_source": if table.is_some() { "table" } else { "analytic" },
        "runs": rows,
        "transform_error": errors,
    });
    write_json(&a.out, &summary)?;
    Ok(vec![a.out.clone()])
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let start = Instant::now();
    let (name, args, seed, outputs) = match &cli.cmd {
        Cmd::GenTransforms(a) => ("gen-transforms", serde_json::to_value(a)?, None, cmd_gen(a)?),
        Cmd::CheckError(a) => ("check-error", serde_json::to_value(a)?, Some(a.seed), cmd_check(a)?),
        Cmd::Bench(a) => ("bench", serde_json::to_value(a)?, Some(a.seed), cmd_bench(a)?),
        Cmd::Train(a) => ("train", serde_json::to_value(a)?, Some(a.opt.seed), cmd_train(a)?),
        Cmd::Adapt(a) => ("adapt", serde_json::to_value(a)?, Some(a.opt.seed), cmd_adapt(a)?),
        Cmd::Search(a) => ("search", serde_json::to_value(a)?, Some(a.seed), cmd_search(a)?),
        Cmd::Eval(a) => ("eval", serde_json::to_value(a)?, None, cmd_eval(a)?),
        Cmd::ExportReport(a) => ("export-report", serde_json::to_value(a)?, None, cmd_report(a)?),
    };
    let manifest = RunManifest::new(name, args, seed, start.elapsed().as_secs_f64(), &outputs);
    for out in &outputs {
        manifest.write_beside(out)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
