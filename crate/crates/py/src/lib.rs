//! Python bindings. Tensors cross the boundary as flat `list[float]` plus an
//! NCHW shape tuple; everything else is plain Python values.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use winoq::conv::{self, ConvAlgo, ConvShape, CostModel};
use winoq::data;
use winoq::nas::{self, SearchConfig, SearchSpace};
use winoq::numerics::{Mat, Tensor4};
use winoq::quant::{Bits, Mode, QSpec};
use winoq::train::{self, checkpoint, presets, PresetOpts, TrainConfig};
use winoq::transforms::{self, TransformFile, WinogradTransform};

fn err(e: winoq::Error) -> PyErr {
    match e {
        winoq::Error::Io(_) | winoq::Error::File { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for winoq::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn algo(s: &str) -> PyResult<ConvAlgo> {
    s.parse().py()
}

fn qspec(bits: u32) -> PyResult<QSpec> {
    Ok(QSpec::new(Bits::from_u32(bits).py()?))
}

fn rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// A Cook-Toom transform triple, kept in exact rational form.
#[pyclass(name = "Transform", module = "pywinoq", frozen)]
struct PyTransform {
    exact: WinogradTransform,
}

#[pymethods]
impl PyTransform {
    /// Build F(m, r); `points` like "0,1,-1,1/2" overrides the default set.
    #[staticmethod]
    #[pyo3(signature = (m, r, points=None))]
    fn cook_toom(m: usize, r: usize, points: Option<&str>) -> PyResult<Self> {
        let pts = match points {
            Some(p) => transforms::PolyPoints::parse(p).py()?,
            None => transforms::default_points(m, r).py()?,
        };
        Ok(Self { exact: transforms::cook_toom_1d(m, r, &pts).py()? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        match TransformFile::from_json(&v).py()? {
            TransformFile::Exact(exact) => Ok(Self { exact }),
            TransformFile::Float(_) => Err(PyValueError::new_err("float transform files are not supported here")),
        }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&TransformFile::Exact(self.exact.clone()).to_json())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn m(&self) -> usize {
        self.exact.m
    }

    #[getter]
    fn r(&self) -> usize {
        self.exact.r
    }

    #[getter]
    fn tile(&self) -> usize {
        self.exact.tile()
    }

    #[getter]
    fn g(&self) -> Vec<Vec<f64>> {
        rows(&self.exact.g.to_f64())
    }

    #[getter]
    fn bt(&self) -> Vec<Vec<f64>> {
        rows(&self.exact.bt.to_f64())
    }

    #[getter]
    fn at(&self) -> Vec<Vec<f64>> {
        rows(&self.exact.at.to_f64())
    }

    /// Fraction of zero entries in (Bᵀ, G, Aᵀ).
    fn sparsity(&self) -> (f64, f64, f64) {
        let e = &self.exact;
        (transforms::sparsity(&e.bt), transforms::sparsity(&e.g), transforms::sparsity(&e.at))
    }

    /// Relative error of a quantized single tile against float64, over
    /// random trials.
    #[pyo3(signature = (bits=8, trials=1000, seed=0))]
    fn error_profile<'py>(&self, py: Python<'py>, bits: u32, trials: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let stats = transforms::transform_error_profile(&self.exact.to_f64(), Bits::from_u32(bits).py()?, trials, seed).py()?;
        let d = PyDict::new(py);
        d.set_item("mean", stats.mean)?;
        d.set_item("p95", stats.p95)?;
        d.set_item("max", stats.max)?;
        d.set_item("per_trial", stats.per_trial)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Transform(m={}, r={})", self.exact.m, self.exact.r)
    }
}

/// Stride-1 convolution of `x` (NCHW) with `w` (OIHW) using `algo`
/// ("direct", "im2row", "im2col", "f2", "f4", ...). Returns (data, shape).
#[pyfunction]
#[pyo3(signature = (x, x_shape, w, w_shape, algo="direct", pad=0, bits=32))]
fn conv2d(
    x: Vec<f64>,
    x_shape: [usize; 4],
    w: Vec<f64>,
    w_shape: [usize; 4],
    algo: &str,
    pad: usize,
    bits: u32,
) -> PyResult<(Vec<f64>, [usize; 4])> {
    if w_shape[2] != w_shape[3] {
        return Err(PyValueError::new_err("only square kernels are supported"));
    }
    let shape = ConvShape::new(x_shape[1], w_shape[0], x_shape[2], x_shape[3], w_shape[2], 1, pad).py()?;
    let xt = Tensor4::new(x_shape, x).py()?;
    let wt = Tensor4::new(w_shape, w).py()?;
    let y = conv::conv2d(&xt, &wt, &shape, self::algo(algo)?, &qspec(bits)?).py()?;
    let dims = y.dims();
    Ok((y.into_data(), dims))
}

fn shape_of(in_ch: usize, out_ch: usize, size: usize, k: usize) -> PyResult<ConvShape> {
    ConvShape::same(in_ch, out_ch, size, k).py()
}

/// Multiplications of a "same"-padded stride-1 layer.
#[pyfunction]
#[pyo3(signature = (algo, in_ch, out_ch, size, k=3))]
fn count_mults(algo: &str, in_ch: usize, out_ch: usize, size: usize, k: usize) -> PyResult<u64> {
    conv::count_mults(self::algo(algo)?, &shape_of(in_ch, out_ch, size, k)?).py()
}

/// Analytic latency estimate in ms.
#[pyfunction]
#[pyo3(signature = (algo, in_ch, out_ch, size, k=3, bits=32, kappa=1.0))]
fn latency_ms(algo: &str, in_ch: usize, out_ch: usize, size: usize, k: usize, bits: u32, kappa: f64) -> PyResult<f64> {
    CostModel { kappa }.latency_ms(self::algo(algo)?, &shape_of(in_ch, out_ch, size, k)?, bits).py()
}

#[pyclass(name = "Dataset", module = "pywinoq", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Oriented-grating images, `per_class` of each class.
    #[staticmethod]
    #[pyo3(signature = (classes=4, per_class=64, size=16, seed=1))]
    fn synthetic(classes: usize, per_class: usize, size: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: data::gen_synthetic(classes, per_class, size, seed).py()? })
    }

    #[staticmethod]
    fn mnist(images: PathBuf, labels: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: data::load_mnist_idx(&images, &labels).py()? })
    }

    #[staticmethod]
    fn cifar10(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: data::load_cifar10_bin(&path).py()? })
    }

    /// (train, val) with `val_fraction` of the samples held out.
    #[pyo3(signature = (val_fraction=0.1, seed=1))]
    fn split(&self, val_fraction: f64, seed: u64) -> (Self, Self) {
        let (a, b) = self.inner.split(val_fraction, seed);
        (Self { inner: a }, Self { inner: b })
    }

    #[getter]
    fn shape(&self) -> [usize; 3] {
        self.inner.dims
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    fn image(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(self.inner.image(i).to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn train_cfg(epochs: usize, lr: f64, batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig { epochs, lr, batch_size, seed, ..TrainConfig::default() }
}

fn report_rows<'py>(py: Python<'py>, report: &train::TrainReport) -> PyResult<Vec<Bound<'py, PyDict>>> {
    report
        .epochs
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("epoch", e.epoch)?;
            d.set_item("lr", e.lr)?;
            d.set_item("train_loss", e.train_loss)?;
            d.set_item("train_acc", e.train_acc)?;
            d.set_item("val_loss", e.val_loss)?;
            d.set_item("val_acc", e.val_acc)?;
            Ok(d)
        })
        .collect()
}

/// A trainable network built from one of the presets.
#[pyclass(name = "Model", module = "pywinoq", unsendable)]
struct PyModel {
    inner: train::Model,
}

#[pymethods]
impl PyModel {
    /// Presets: micro-resnet, lenet-q, tiny, search-net.
    #[staticmethod]
    #[pyo3(signature = (name="micro-resnet", algo="direct", bits=32, flex=false, in_ch=1, size=16, classes=4, width=1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn preset(name: &str, algo: &str, bits: u32, flex: bool, in_ch: usize, size: usize, classes: usize, width: usize, seed: u64) -> PyResult<Self> {
        let opts = PresetOpts { algo: self::algo(algo)?, bits: qspec(bits)?, flex, in_ch, size, classes, width };
        let spec = presets::by_name(name, &opts)
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?} (one of {})", presets::NAMES.join(", "))))?;
        Ok(Self { inner: train::Model::build(&spec, seed).py()? })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: checkpoint::load(&dir).py()? })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &dir).py().map(|_| ())
    }

    /// Trains in place; returns one dict per epoch.
    #[pyo3(signature = (train_ds, val_ds, epochs=10, lr=1e-3, batch_size=32, seed=0))]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        train_ds: &PyDataset,
        val_ds: &PyDataset,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let report = train::train(&mut self.inner, &train_ds.inner, &val_ds.inner, &train_cfg(epochs, lr, batch_size, seed)).py()?;
        report_rows(py, &report)
    }

    /// (loss, accuracy) in eval mode.
    #[pyo3(signature = (ds, batch_size=32))]
    fn evaluate(&mut self, ds: &PyDataset, batch_size: usize) -> PyResult<(f64, f64)> {
        train::evaluate(&mut self.inner, &ds.inner, batch_size).py()
    }

    /// Class logits for a batch in eval mode; `x` is flat NCHW.
    fn predict(&mut self, x: Vec<f64>, shape: [usize; 4]) -> PyResult<Vec<Vec<f64>>> {
        let (logits, _) = self.inner.forward(&Tensor4::new(shape, x).py()?, Mode::Eval).py()?;
        let k = logits.c();
        Ok(logits.data().chunks(k).map(<[f64]>::to_vec).collect())
    }

    /// Copy of this model re-targeted to `algo`, warmed up and fine-tuned.
    /// Returns (model, summary dict).
    #[pyo3(signature = (algo, train_ds, val_ds, bits=32, flex=false, epochs=1, lr=1e-3, batch_size=32, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn adapt<'py>(
        &mut self,
        py: Python<'py>,
        algo: &str,
        train_ds: &PyDataset,
        val_ds: &PyDataset,
        bits: u32,
        flex: bool,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
        let cfg = train_cfg(epochs, lr, batch_size, seed);
        let (m, rep) = train::adapt(&mut self.inner, self::algo(algo)?, qspec(bits)?, flex, &train_ds.inner, &val_ds.inner, &cfg).py()?;
        let d = PyDict::new(py);
        d.set_item("source_acc", rep.source_acc)?;
        d.set_item("warmup_acc", rep.warmup_acc)?;
        d.set_item("epochs", report_rows(py, &rep.train)?)?;
        Ok((PyModel { inner: m }, d))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec.name.clone()
    }

    /// (layer name, algorithm, bits) of every convolution.
    #[getter]
    fn convs(&self) -> Vec<(String, String, u32)> {
        self.inner.spec.conv_specs().map(|c| (c.name.clone(), c.algo.name(), c.bits.bits.as_u32())).collect()
    }
}

/// Latency-aware per-layer search over the analytic cost model. Returns the
/// derived architecture as JSON text.
#[pyfunction]
#[pyo3(signature = (train_ds, val_ds, model="search-net", space="wa", bits=8, lambda2=0.01, epochs=10, seed=0))]
#[allow(clippy::too_many_arguments)]
fn search(train_ds: &PyDataset, val_ds: &PyDataset, model: &str, space: &str, bits: u32, lambda2: f64, epochs: usize, seed: u64) -> PyResult<String> {
    let b = Bits::from_u32(bits).py()?;
    let space = SearchSpace::parse(space, b).py()?;
    let [in_ch, size, _] = train_ds.inner.dims;
    let opts = PresetOpts { algo: ConvAlgo::Im2row, bits: QSpec::new(b), in_ch, size, classes: train_ds.inner.classes, ..PresetOpts::default() };
    let spec = presets::by_name(model, &opts).ok_or_else(|| PyValueError::new_err(format!("unknown preset {model:?}")))?;
    let shapes: Vec<ConvShape> = nas::searchable_shapes(&spec).py()?.into_iter().map(|(_, s)| s).collect();
    let bit_list: Vec<u32> = space.bits.iter().map(|q| q.as_u32()).chain([bits]).collect();
    let table = winoq::bench::analytic_table_for(&shapes, &space.algos, &bit_list, 1.0).py()?;
    let cfg = SearchConfig { epochs, lambda2, seed, ..SearchConfig::default() };
    let res = nas::search(&spec, &space, &table, &cfg, &train_ds.inner, &val_ds.inner).py()?;
    res.arch.to_json().py()
}

#[pymodule]
fn pywinoq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransform>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(conv2d, m)?)?;
    m.add_function(wrap_pyfunction!(count_mults, m)?)?;
    m.add_function(wrap_pyfunction!(latency_ms, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
