//! Datasets: MNIST IDX and CIFAR-10 binary loaders, and a seeded synthetic
//! texture task. All pixels are mapped to `[-1, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor4;

pub const DATA_DIR_ENV: &str = "WINOQ_DATA_DIR";

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Images with integer labels. May be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[channels, height, width]` of one image.
    pub dims: [usize; 3],
    pub pixels: Vec<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(dims: [usize; 3], pixels: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let per = dims.iter().product::<usize>();
        if per == 0 || pixels.len() != per * labels.len() {
            return shape_err(format!("{} pixels for {} images of {dims:?}", pixels.len(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Format(format!("label {bad} outside {classes} classes")));
        }
        Ok(Self { dims, pixels, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.image_len();
        &self.pixels[i * p..(i + 1) * p]
    }

    /// Stacks the selected images into an NCHW batch.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor4, Vec<usize>)> {
        if idx.is_empty() {
            return shape_err("empty batch");
        }
        let mut data = Vec::with_capacity(idx.len() * self.image_len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return shape_err(format!("index {i} outside dataset of {}", self.len()));
            }
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.dims;
        Ok((Tensor4::new([idx.len(), c, h, w], data)?, labels))
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(idx.len() * self.image_len());
        for &i in idx {
            pixels.extend_from_slice(self.image(i));
        }
        Dataset {
            dims: self.dims,
            pixels,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Seeded split into `(train, val)` with `val_fraction` of the items
    /// held out.
    pub fn split(&self, val_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((self.len() as f64) * val_fraction).round() as usize;
        let (val, train) = order.split_at(n_val.min(self.len()));
        (self.subset(train), self.subset(val))
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

fn to_unit(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Parses IDX image and label files (as produced for MNIST).
pub fn parse_mnist_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!("image file magic: expected {IDX_IMAGES:#010x}, found {magic:#010x}")));
    }
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!("label file magic: expected {IDX_LABELS:#010x}, found {magic:#010x}")));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::Format(format!("{n} images but {n_labels} labels")));
    }
    let body = &images[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Format(format!("image file holds {} bytes, header promises {}", body.len(), n * rows * cols)));
    }
    let lbody = &labels[8..];
    if lbody.len() != n {
        return Err(Error::Format(format!("label file holds {} bytes, header promises {n}", lbody.len())));
    }
    let labels: Vec<usize> = lbody.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(10, |&m| (m + 1).max(10));
    if rows == 0 || cols == 0 {
        return Err(Error::Format("zero-sized images".into()));
    }
    Dataset::new([1, rows, cols], body.iter().map(|&p| to_unit(p)).collect(), labels, classes)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    parse_mnist_idx(&crate::error::read_file(images_path)?, &crate::error::read_file(labels_path)?)
}

/// Encodes images (raw bytes, row-major) and labels as IDX files.
pub fn write_mnist_idx(images: &Path, labels: &Path, rows: usize, cols: usize, pixels: &[u8], lbls: &[u8]) -> Result<()> {
    if pixels.len() != rows * cols * lbls.len() {
        return shape_err("pixel count does not match labels");
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    img.extend_from_slice(&(lbls.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + lbls.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&(lbls.len() as u32).to_be_bytes());
    lab.extend_from_slice(lbls);
    fs::write(images, img)?;
    fs::write(labels, lab)?;
    Ok(())
}

/// Parses CIFAR-10 binary records (label byte then 3072 CHW bytes).
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "CIFAR file length {} is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    if bytes.is_empty() {
        log::warn!("empty CIFAR file");
    }
    let mut labels = Vec::new();
    let mut pixels = Vec::with_capacity(bytes.len());
    for rec in bytes.chunks(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&p| to_unit(p)));
    }
    Dataset::new([3, 32, 32], pixels, labels, 10)
}

pub fn load_cifar10_bin(path: &Path) -> Result<Dataset> {
    parse_cifar10_bin(&crate::error::read_file(path)?)
}

/// Resolves a relative dataset path against `WINOQ_DATA_DIR` when it does
/// not exist as given.
pub fn resolve_data_path(p: &Path) -> PathBuf {
    if p.is_relative() && !p.exists() {
        if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
            return Path::new(&dir).join(p);
        }
    }
    p.to_path_buf()
}

/// Oriented sinusoid gratings: each class has its own orientation and
/// frequency, each sample a random phase and contrast plus Gaussian noise
/// (σ = 0.1). Random phase makes the classes linearly inseparable in
/// pixel space.
pub fn gen_synthetic(classes: usize, n_per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid sigma");
    let n = classes * n_per_class;
    let mut pixels = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        let theta = std::f64::consts::PI * k as f64 / classes as f64;
        let freq = if k % 2 == 0 { 2.0 } else { 3.5 };
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.5..0.85);
        let (s, c) = theta.sin_cos();
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 * c + y as f64 * s) / size as f64;
                let v = amp * (std::f64::consts::TAU * freq * u + phase).sin() + noise.sample(&mut rng);
                pixels.push(v.clamp(-1.0, 1.0));
            }
        }
        labels.push(k);
    }
    Ok(Dataset {
        dims: [1, size, size],
        pixels,
        labels,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let a = gen_synthetic(4, 8, 12, 3).unwrap();
        let b = gen_synthetic(4, 8, 12, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a.len(), 32);
        assert_ne!(a, gen_synthetic(4, 8, 12, 4).unwrap());
        assert!(gen_synthetic(4, 0, 12, 3).unwrap().is_empty());
        assert!(gen_synthetic(1, 4, 12, 3).is_err());
    }

    #[test]
    fn split_partitions() {
        let d = gen_synthetic(4, 25, 8, 1).unwrap();
        let (tr, va) = d.split(0.1, 9);
        assert_eq!((tr.len(), va.len()), (90, 10));
        let (tr2, _) = d.split(0.1, 9);
        assert_eq!(tr, tr2);
    }

    #[test]
    fn cifar_parse() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD];
        bytes[0] = 9;
        bytes[1] = 255;
        bytes[CIFAR_RECORD] = 3;
        let d = parse_cifar10_bin(&bytes).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dims, [3, 32, 32]);
        assert_eq!(d.labels, vec![9, 3]);
        assert_eq!(d.pixels[0], 1.0);
        assert_eq!(d.pixels[1], -1.0);
        assert!(parse_cifar10_bin(&bytes[..100]).is_err());
        assert!(parse_cifar10_bin(&[]).unwrap().is_empty());
    }
}
