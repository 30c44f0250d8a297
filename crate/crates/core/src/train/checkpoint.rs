//! Checkpoint directory format: `manifest.json` describing version,
//! step, configs, and every tensor (model weights plus Adam moments),
//! with one raw little-endian 32-bit-float row-major `.bin` per tensor.
//! Language-neutral and byte-stable across save→load→save.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainConfig;
use crate::model::{Model, ModelConfig, ModelError, ParamStore};
use crate::numerics::{AdamState, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint version {got}, this build reads version {expected}")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("tensor `{name}`: file holds {got} values, manifest shape {shape:?} needs {expected}")]
    ShapeDrift {
        name: String,
        shape: Vec<usize>,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    step: u64,
    adam_step: u64,
    model_config: ModelConfig,
    train_config: TrainConfig,
    tensors: Vec<TensorEntry>,
}

/// `encoder.block00.attn.wq` → `encoder.block00.attn.wq.bin` and so on;
/// Adam moments are stored under `adam.m.` / `adam.v.` prefixes.
fn tensor_file(name: &str) -> String {
    format!("{name}.bin")
}

fn write_tensor(dir: &Path, file: &str, t: &Tensor<f32>) -> Result<(), CheckpointError> {
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(file), bytes)?;
    Ok(())
}

fn read_tensor(
    dir: &Path,
    entry: &TensorEntry,
) -> Result<Tensor<f32>, CheckpointError> {
    let bytes = fs::read(dir.join(&entry.file))?;
    let expected: usize = entry.shape.iter().product();
    if bytes.len() != expected * 4 {
        return Err(CheckpointError::ShapeDrift {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
            got: bytes.len() / 4,
            expected,
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(entry.shape.clone(), data)
        .map_err(|e| CheckpointError::Invalid(e.to_string()))
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for (name, t) in ckpt.model.params.iter() {
        let file = tensor_file(name);
        write_tensor(dir, &file, t)?;
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            file,
        });
    }
    for (prefix, moments) in [("adam.m", &ckpt.adam.m), ("adam.v", &ckpt.adam.v)] {
        for (name, t) in ckpt.model.params.names().zip(moments) {
            let full = format!("{prefix}.{name}");
            let file = tensor_file(&full);
            write_tensor(dir, &file, t)?;
            tensors.push(TensorEntry {
                name: full,
                shape: t.shape().to_vec(),
                file,
            });
        }
    }
    let manifest = Manifest {
        version: ckpt.version,
        step: ckpt.step,
        adam_step: ckpt.adam.step,
        model_config: ckpt.model.cfg.clone(),
        train_config: ckpt.train.clone(),
        tensors,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CheckpointError> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            got: manifest.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut by_name: IndexMap<String, Tensor<f32>> = IndexMap::new();
    for entry in &manifest.tensors {
        by_name.insert(entry.name.clone(), read_tensor(dir, entry)?);
    }

    let spec = manifest.model_config.param_spec();
    let mut weights = IndexMap::new();
    let mut m = Vec::with_capacity(spec.len());
    let mut v = Vec::with_capacity(spec.len());
    for (name, shape) in &spec {
        for (prefix, out) in [("adam.m", &mut m), ("adam.v", &mut v)] {
            let key = format!("{prefix}.{name}");
            let t = by_name
                .shift_remove(&key)
                .ok_or_else(|| CheckpointError::Invalid(format!("missing tensor `{key}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeDrift {
                    name: key,
                    shape: t.shape().to_vec(),
                    got: t.numel(),
                    expected: shape.iter().product(),
                });
            }
            out.push(t);
        }
        let t = by_name
            .shift_remove(name)
            .ok_or_else(|| CheckpointError::Invalid(format!("missing tensor `{name}`")))?;
        weights.insert(name.clone(), t);
    }
    let params = ParamStore::from_tensors(&manifest.model_config, weights)?;

    let mut adam: AdamState<f32> = AdamState::new(&spec.iter().map(|(_, s)| s.clone()).collect::<Vec<_>>());
    adam.step = manifest.adam_step;
    adam.m = m;
    adam.v = v;

    Ok(Checkpoint {
        version: manifest.version,
        step: manifest.step,
        model: Model {
            cfg: manifest.model_config,
            params,
        },
        adam,
        train: manifest.train_config,
    })
}

/// Total bytes of a saved checkpoint directory.
pub fn dir_size(dir: &Path) -> Result<u64, CheckpointError> {
    let mut total = 0;
    for entry in fs::read_dir(dir)? {
        total += entry?.metadata()?.len();
    }
    Ok(total)
}
