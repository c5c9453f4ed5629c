//! Convolution latency sweep: measured timings on the host or the analytic
//! cost model, persisted as a CSV latency table.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{
    conv2d, filter_transform, hadamard_accumulate, input_transform, output_transform, quantize_stage, ConvAlgo,
    ConvShape, CostModel, TileGrid,
};
use crate::error::{Error, Result};
use crate::numerics::{Precision, Tensor4};
use crate::quant::{Bits, QSpec};
use crate::transforms::default_transform;

pub const CSV_HEADER: &str = "algo,out_h,out_w,in_ch,out_ch,bits,median_ms,min_ms,max_ms,transform_fraction";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Measured,
    Analytic,
}

impl std::str::FromStr for BenchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "measured" => Ok(BenchMode::Measured),
            "analytic" => Ok(BenchMode::Analytic),
            _ => Err(Error::Config(format!("unknown bench mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub algos: Vec<ConvAlgo>,
    /// Output height and width of each point (square maps, "same" padding).
    pub out_sizes: Vec<usize>,
    pub channel_pairs: Vec<(usize, usize)>,
    pub bits: Vec<u32>,
    pub k: usize,
    pub reps: usize,
    pub cooldown_ms: u64,
    pub single_thread: bool,
    pub mode: BenchMode,
    pub kappa: f64,
    /// Points whose buffers would exceed this many bytes are skipped.
    pub max_bytes: usize,
    pub seed: u64,
}

pub const SWEEP_SIZES: [usize; 7] = [112, 56, 28, 14, 7, 4, 2];
pub const SWEEP_CHANNELS: [(usize, usize); 10] = [
    (3, 32),
    (32, 32),
    (32, 64),
    (64, 64),
    (64, 128),
    (128, 128),
    (128, 256),
    (256, 256),
    (256, 512),
    (512, 512),
];

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            algos: vec![ConvAlgo::Im2row, ConvAlgo::Im2col, ConvAlgo::Winograd(2), ConvAlgo::Winograd(4), ConvAlgo::Winograd(6)],
            out_sizes: SWEEP_SIZES.to_vec(),
            channel_pairs: SWEEP_CHANNELS.to_vec(),
            bits: vec![32, 16, 8],
            k: 3,
            reps: 5,
            cooldown_ms: 0,
            single_thread: true,
            mode: BenchMode::Measured,
            kappa: 1.0,
            max_bytes: 1 << 30,
            seed: 0,
        }
    }
}

impl BenchConfig {
    /// Named presets: `paper-sweep` (the full grid) and `desk` (small maps
    /// and channel counts, quick to measure).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-sweep" => Ok(Self::default()),
            "desk" => Ok(Self {
                out_sizes: vec![16, 8, 4],
                channel_pairs: vec![(3, 32), (8, 8), (16, 16), (32, 32)],
                bits: vec![32, 8],
                ..Self::default()
            }),
            _ => Err(Error::Config(format!("unknown bench preset {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.out_sizes.contains(&0) {
            return Err(Error::Config("sizes must be >= 1".into()));
        }
        for &b in &self.bits {
            Bits::from_u32(b)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub algo: ConvAlgo,
    pub out_h: usize,
    pub out_w: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub bits: u32,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Share of time in input and output transforms; Winograd rows only.
    pub transform_fraction: Option<f64>,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

pub type RowKey = (ConvAlgo, usize, usize, usize, usize, u32);

impl LatencyRow {
    pub fn key(&self) -> RowKey {
        (self.algo, self.out_h, self.out_w, self.in_ch, self.out_ch, self.bits)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Latency rows in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatencyTable {
    pub rows: Vec<LatencyRow>,
}

impl LatencyTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, key: RowKey) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.key() == key)
    }

    /// Median latency of `algo` on `shape` at `bits`.
    pub fn lookup(&self, algo: ConvAlgo, shape: &ConvShape, bits: u32) -> Result<f64> {
        let (oh, ow) = shape.out_hw()?;
        let key = (algo, oh, ow, shape.in_ch, shape.out_ch, bits);
        self.get(key).map(|r| r.median_ms).ok_or_else(|| {
            Error::MissingKey(format!(
                "latency of {algo} at {oh}x{ow}, {}->{} channels, {bits} bits",
                shape.in_ch, shape.out_ch
            ))
        })
    }

    pub fn insert(&mut self, row: LatencyRow) {
        match self.rows.iter_mut().find(|r| r.key() == row.key()) {
            Some(r) => *r = row,
            None => self.rows.push(row),
        }
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(CSV_HEADER.split(','))?;
        for r in &self.rows {
            let tf = r.transform_fraction.map(|v| v.to_string()).unwrap_or_default();
            wr.write_record([
                r.algo.name(),
                r.out_h.to_string(),
                r.out_w.to_string(),
                r.in_ch.to_string(),
                r.out_ch.to_string(),
                r.bits.to_string(),
                r.median_ms.to_string(),
                r.min_ms.to_string(),
                r.max_ms.to_string(),
                tf,
            ])?;
        }
        let bytes = wr.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(s.as_bytes());
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::Format(format!("latency table header {:?}", header.join(","))));
        }
        let mut table = LatencyTable::default();
        for rec in rd.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Format(format!("bad number {:?} in column {i}", &rec[i])))
            };
            let u = |i: usize| -> Result<usize> {
                rec[i].parse().map_err(|_| Error::Format(format!("bad integer {:?} in column {i}", &rec[i])))
            };
            let row = LatencyRow {
                algo: rec[0].parse()?,
                out_h: u(1)?,
                out_w: u(2)?,
                in_ch: u(3)?,
                out_ch: u(4)?,
                bits: u(5)? as u32,
                median_ms: f(6)?,
                min_ms: f(7)?,
                max_ms: f(8)?,
                transform_fraction: if rec[9].is_empty() { None } else { Some(f(9)?) },
                samples: Vec::new(),
            };
            table.insert(row);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv_str(&crate::error::read_text(path)?)
    }
}

fn random_tensor(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

/// Analytic row: every statistic equals the cost-model latency.
pub fn analytic_row(algo: ConvAlgo, shape: &ConvShape, bits: u32, kappa: f64) -> Result<LatencyRow> {
    let cm = CostModel { kappa };
    let lat = cm.latency_ms(algo, shape, bits)?;
    let (out_h, out_w) = shape.out_hw()?;
    Ok(LatencyRow {
        algo,
        out_h,
        out_w,
        in_ch: shape.in_ch,
        out_ch: shape.out_ch,
        bits,
        median_ms: lat,
        min_ms: lat,
        max_ms: lat,
        transform_fraction: algo.is_winograd().then(|| cm.transform_fraction(algo, shape)).transpose()?,
        samples: Vec::new(),
    })
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Times `reps` runs of one convolution after an untimed warm run. Winograd
/// rows time the input transform, Hadamard stage and output transform
/// separately; the filter transform is precomputed as at inference.
pub fn bench_point(algo: ConvAlgo, shape: &ConvShape, bits: u32, reps: usize, seed: u64) -> Result<LatencyRow> {
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    algo.check(shape)?;
    let qspec = QSpec::new(Bits::from_u32(bits)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor([1, shape.in_ch, shape.in_h, shape.in_w], &mut rng);
    let w = random_tensor(shape.weight_dims(), &mut rng);
    let (out_h, out_w) = shape.out_hw()?;
    let mut samples = Vec::with_capacity(reps);
    let mut fractions = Vec::with_capacity(reps);
    match algo {
        ConvAlgo::Winograd(m) => {
            let tf = default_transform(m, shape.k)?.to_f64();
            let grid = TileGrid::new(shape.in_h, shape.in_w, shape.pad, m, shape.k)?;
            let mut u = filter_transform(&w, &tf)?;
            quantize_stage(&mut u.data, &qspec, Precision::F64);
            let p = Precision::F64;
            let run = || -> Result<(Duration, Duration)> {
                let t0 = Instant::now();
                let mut xq = x.clone();
                quantize_stage(xq.data_mut(), &qspec, p);
                let mut v = input_transform(&xq, tf.bt.data(), &grid);
                quantize_stage(&mut v, &qspec, p);
                let t1 = Instant::now();
                let mut mm = hadamard_accumulate(&u, &v, 1, grid.tiles());
                quantize_stage(&mut mm, &qspec, p);
                let t2 = Instant::now();
                let mut y = output_transform(&mm, tf.at.data(), &grid, 1, shape.out_ch)?;
                quantize_stage(y.data_mut(), &qspec, p);
                let t3 = Instant::now();
                std::hint::black_box(&y);
                Ok((t3 - t0, (t1 - t0) + (t3 - t2)))
            };
            run()?;
            for _ in 0..reps {
                let (total, tf_time) = run()?;
                samples.push(ms(total));
                fractions.push(if total.is_zero() { 0.0 } else { tf_time.as_secs_f64() / total.as_secs_f64() });
            }
        }
        _ => {
            let run = || conv2d(&x, &w, shape, algo, &qspec);
            std::hint::black_box(run()?);
            for _ in 0..reps {
                let t0 = Instant::now();
                std::hint::black_box(run()?);
                samples.push(ms(t0.elapsed()));
            }
        }
    }
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(LatencyRow {
        algo,
        out_h,
        out_w,
        in_ch: shape.in_ch,
        out_ch: shape.out_ch,
        bits,
        median_ms: median(&samples),
        min_ms: min,
        max_ms: max,
        transform_fraction: algo.is_winograd().then(|| median(&fractions)),
        samples,
    })
}

/// Rough peak buffer size of a measured point.
fn point_bytes(algo: ConvAlgo, shape: &ConvShape) -> usize {
    let (oh, ow) = shape.out_hw().unwrap_or((shape.in_h, shape.in_w));
    let elems = match algo {
        ConvAlgo::Winograd(m) => {
            let n = m + shape.k - 1;
            let tiles = oh.div_ceil(m) * ow.div_ceil(m);
            tiles * n * n * (shape.in_ch + shape.out_ch) + shape.in_ch * shape.out_ch * n * n
        }
        _ => oh * ow * shape.in_ch * shape.k * shape.k + oh * ow * shape.out_ch,
    };
    elems * 8
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildOutcome {
    pub measured: usize,
    pub reused: usize,
    /// Human-readable reasons for skipped points.
    pub skipped: Vec<String>,
}

/// Fills `table` with every point of the configuration grid not already
/// present. `on_row` sees each new row (e.g. to persist progress).
pub fn build_table(cfg: &BenchConfig, table: &mut LatencyTable, mut on_row: impl FnMut(&LatencyTable) -> Result<()>) -> Result<BuildOutcome> {
    cfg.validate()?;
    let mut outcome = BuildOutcome::default();
    let pool = if cfg.single_thread && cfg.mode == BenchMode::Measured {
        Some(rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    for &algo in &cfg.algos {
        for &size in &cfg.out_sizes {
            for &(ci, co) in &cfg.channel_pairs {
                for &bits in &cfg.bits {
                    let shape = match ConvShape::same(ci, co, size, cfg.k) {
                        Ok(s) => s,
                        Err(e) => {
                            outcome.skipped.push(format!("{algo} {size} {ci}->{co}: {e}"));
                            continue;
                        }
                    };
                    if table.get((algo, size, size, ci, co, bits)).is_some() {
                        outcome.reused += 1;
                        continue;
                    }
                    let row = match cfg.mode {
                        BenchMode::Analytic => analytic_row(algo, &shape, bits, cfg.kappa)?,
                        BenchMode::Measured => {
                            if point_bytes(algo, &shape) > cfg.max_bytes {
                                outcome.skipped.push(format!("{algo} {size} {ci}->{co} {bits}b: exceeds memory budget"));
                                continue;
                            }
                            if cfg.cooldown_ms > 0 {
                                std::thread::sleep(Duration::from_millis(cfg.cooldown_ms));
                            }
                            let seed = cfg.seed;
                            match &pool {
                                Some(p) => p.install(|| bench_point(algo, &shape, bits, cfg.reps, seed))?,
                                None => bench_point(algo, &shape, bits, cfg.reps, seed)?,
                            }
                        }
                    };
                    table.insert(row);
                    outcome.measured += 1;
                    on_row(table)?;
                }
            }
        }
    }
    Ok(outcome)
}

/// Analytic rows for explicit layer shapes, one per algorithm and bit width
/// valid for the shape.
pub fn analytic_table_for(shapes: &[ConvShape], algos: &[ConvAlgo], bits: &[u32], kappa: f64) -> Result<LatencyTable> {
    let mut t = LatencyTable::default();
    for s in shapes {
        for &a in algos {
            if a.check(s).is_err() {
                continue;
            }
            for &b in bits {
                t.insert(analytic_row(a, s, b, kappa)?);
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reps_and_median() {
        let s = ConvShape::same(2, 2, 4, 3).unwrap();
        let r = bench_point(ConvAlgo::Im2row, &s, 32, 5, 0).unwrap();
        assert_eq!(r.samples.len(), 5);
        assert!(r.min_ms <= r.median_ms && r.median_ms <= r.max_ms);
        assert_eq!(r.transform_fraction, None);
        let r = bench_point(ConvAlgo::Winograd(2), &s, 8, 3, 0).unwrap();
        let f = r.transform_fraction.unwrap();
        assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn grid_sizes() {
        let mut cfg = BenchConfig {
            algos: vec![],
            mode: BenchMode::Analytic,
            ..BenchConfig::default()
        };
        let mut t = LatencyTable::default();
        build_table(&cfg, &mut t, |_| Ok(())).unwrap();
        assert!(t.is_empty());
        cfg.algos = vec![ConvAlgo::Im2row, ConvAlgo::Winograd(2)];
        cfg.out_sizes = vec![8, 4];
        cfg.channel_pairs = vec![(4, 4)];
        cfg.bits = vec![8];
        build_table(&cfg, &mut t, |_| Ok(())).unwrap();
        assert_eq!(t.len(), 4);
        let again = build_table(&cfg, &mut t, |_| Ok(())).unwrap();
        assert_eq!((again.measured, again.reused), (0, 4));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = BenchConfig {
            mode: BenchMode::Analytic,
            out_sizes: vec![14, 7],
            channel_pairs: vec![(3, 32), (64, 64)],
            ..BenchConfig::default()
        };
        let mut t = LatencyTable::default();
        build_table(&cfg, &mut t, |_| Ok(())).unwrap();
        let s = t.to_csv_string().unwrap();
        assert!(s.starts_with(CSV_HEADER));
        let back = LatencyTable::from_csv_str(&s).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv_string().unwrap(), s);
    }

    #[test]
    fn lookup_names_missing_key() {
        let t = LatencyTable::default();
        let s = ConvShape::same(8, 8, 8, 3).unwrap();
        let e = t.lookup(ConvAlgo::Winograd(4), &s, 8).unwrap_err();
        assert!(e.to_string().contains("wg4"), "{e}");
    }
}
