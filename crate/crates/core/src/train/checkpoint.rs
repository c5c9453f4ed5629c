//! Checkpoints: a JSON manifest plus one little-endian f64 blob per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::model::{Layer, Model, ModelSpec};

const FORMAT: &str = "winoq-checkpoint-1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub path: String,
    pub dims: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub spec: ModelSpec,
    pub tensors: Vec<TensorEntry>,
    /// Quantization observer state per layer.
    pub observers: BTreeMap<String, serde_json::Value>,
    /// Interpolation points of each Winograd layer.
    pub transforms: BTreeMap<String, String>,
}

fn tensors(model: &Model) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out: Vec<_> = model.params().iter().map(|p| (p.name.clone(), p.dims.clone(), p.value.clone())).collect();
    for node in &model.nodes {
        if let Layer::BatchNorm(bn) = &node.layer {
            out.push((format!("{}.running_mean", node.name), vec![bn.channels], bn.running_mean.clone()));
            out.push((format!("{}.running_var", node.name), vec![bn.channels], bn.running_var.clone()));
        }
    }
    out
}

pub fn encode_f64(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("blob of {} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn save(model: &Model, dir: &Path) -> Result<Manifest> {
    if model.nodes.iter().any(|n| matches!(n.layer, Layer::Mixed(_))) {
        return Err(Error::Config("search supernets are not checkpointable; derive an architecture first".into()));
    }
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (path, dims, value) in tensors(model) {
        let file = format!("{path}.bin");
        fs::write(dir.join(&file), encode_f64(&value))?;
        entries.push(TensorEntry { path, dims, file });
    }
    let mut observers = BTreeMap::new();
    let mut transforms = BTreeMap::new();
    for node in &model.nodes {
        let v = match &node.layer {
            Layer::Wa(l) => {
                transforms.insert(node.name.clone(), l.points.to_string());
                serde_json::to_value(l.nodes)?
            }
            Layer::Conv(l) => serde_json::to_value(l.nodes)?,
            Layer::Linear(l) => serde_json::to_value(l.nodes)?,
            _ => continue,
        };
        observers.insert(node.name.clone(), v);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        spec: model.spec.clone(),
        tensors: entries,
        observers,
        transforms,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load(dir: &Path) -> Result<Model> {
    let manifest: Manifest = serde_json::from_str(&crate::error::read_text(&dir.join(MANIFEST))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Format(format!("checkpoint format {:?}, expected {FORMAT:?}", manifest.format)));
    }
    let mut model = Model::build(&manifest.spec, 0)?;
    let mut blobs = BTreeMap::new();
    for e in &manifest.tensors {
        let v = decode_f64(&crate::error::read_file(&dir.join(&e.file))?)?;
        if v.len() != e.dims.iter().product::<usize>() {
            return Err(Error::Format(format!("tensor {} holds {} values for dims {:?}", e.path, v.len(), e.dims)));
        }
        blobs.insert(e.path.clone(), (e.dims.clone(), v));
    }
    let mut take = |path: &str, dims: &[usize]| -> Result<Vec<f64>> {
        let (d, v) = blobs.remove(path).ok_or_else(|| Error::MissingKey(path.to_string()))?;
        if d != dims {
            return Err(Error::Format(format!("tensor {path} has dims {d:?}, model expects {dims:?}")));
        }
        Ok(v)
    };
    for p in model.params_mut() {
        p.value = take(&p.name, &p.dims)?;
    }
    for node in &mut model.nodes {
        let obs = manifest.observers.get(&node.name);
        let missing = || Error::MissingKey(format!("observers of {}", node.name));
        match &mut node.layer {
            Layer::BatchNorm(bn) => {
                bn.running_mean = take(&format!("{}.running_mean", node.name), &[bn.channels])?;
                bn.running_var = take(&format!("{}.running_var", node.name), &[bn.channels])?;
            }
            Layer::Wa(l) => l.nodes = serde_json::from_value(obs.ok_or_else(missing)?.clone())?,
            Layer::Conv(l) => l.nodes = serde_json::from_value(obs.ok_or_else(missing)?.clone())?,
            Layer::Linear(l) => l.nodes = serde_json::from_value(obs.ok_or_else(missing)?.clone())?,
            _ => {}
        }
    }
    Ok(model)
}
