use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::container::{read_f32, write_f32};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::train::normalize::Normalizer;
use crate::train::trainer::TrainConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

/// A trained model with everything needed to run it on raw samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    pub normalizer: Normalizer,
    /// Optimizer steps taken when these parameters were captured.
    pub step: u64,
    pub epoch: usize,
    pub val_rmse: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    path: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    seed: u64,
    step: u64,
    epoch: usize,
    val_rmse: Option<f64>,
    config: TrainConfig,
    normalizer: Normalizer,
    params: Vec<ParamEntry>,
}

/// Writes `manifest.json` plus `params/<name>.bin` per tensor.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint, force: bool) -> Result<()> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        if !force {
            return Err(Error::Exists(manifest_path));
        }
        let params = dir.join("params");
        if params.exists() {
            fs::remove_dir_all(&params).map_err(|e| Error::io(&params, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ckpt.params.tensors.len());
    for (name, t) in &ckpt.params.tensors {
        let path = format!("params/{name}.bin");
        write_f32(&dir.join(&path), t)?;
        entries.push(ParamEntry { name: name.clone(), path, shape: t.shape().to_vec() });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: ckpt.config.seed,
        step: ckpt.step,
        epoch: ckpt.epoch,
        val_rmse: ckpt.val_rmse,
        config: ckpt.config.clone(),
        normalizer: ckpt.normalizer.clone(),
        params: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        offset: 0,
        msg: format!("line {} column {}: {e}", e.line(), e.column()),
    })?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path: manifest_path,
            offset: 0,
            msg: format!("unsupported checkpoint version {}", m.format_version),
        });
    }
    let mut tensors = BTreeMap::new();
    for e in m.params {
        let t = read_f32(&dir.join(&e.path))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Corruption {
                path: dir.join(&e.path),
                msg: format!("shape {:?} disagrees with manifest {:?}", t.shape(), e.shape),
            });
        }
        tensors.insert(e.name, t);
    }
    let params = ModelParams { tensors };
    params.check_layout(&m.config.model)?;
    Ok(Checkpoint {
        config: m.config,
        params,
        normalizer: m.normalizer,
        step: m.step,
        epoch: m.epoch,
        val_rmse: m.val_rmse,
    })
}

/// SHA-256 over the manifest and every parameter file, in manifest order.
pub fn checkpoint_digest(dir: &Path) -> Result<String> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_slice(&bytes)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    for e in &m.params {
        let p = dir.join(&e.path);
        h.update(fs::read(&p).map_err(|err| Error::io(&p, err))?);
    }
    Ok(hex::encode(h.finalize()))
}
