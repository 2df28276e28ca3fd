use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sftik_tensor::Tensor;

use crate::dataset::container::{read_f32, write_f32};
use crate::error::{Error, Result};
use crate::types::{Side, StrideSample, Terrain};

pub const INDEX_FILE: &str = "index.jsonl";
const BLOB_DIR: &str = "blobs";

/// One line of `index.jsonl`. Paths are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRecord {
    pub subject: u32,
    pub terrain: Terrain,
    pub prev_terrain: Terrain,
    pub side: Side,
    pub stride_id: u32,
    #[serde(rename = "K_path")]
    pub k_path: String,
    #[serde(rename = "I_prev_path")]
    pub i_prev_path: String,
    #[serde(rename = "I_cur_path")]
    pub i_cur_path: String,
    #[serde(rename = "A_path")]
    pub a_path: String,
}

/// In-memory stride samples. Key-frames shared between consecutive samples
/// are shared `Arc`s.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StrideDataset {
    pub samples: Vec<StrideSample>,
}

impl StrideDataset {
    pub fn new(samples: Vec<StrideSample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subjects(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.samples.iter().map(|s| s.subject).collect();
        set.into_iter().collect()
    }

    pub fn filter_subjects(&self, subjects: &[u32]) -> StrideDataset {
        StrideDataset {
            samples: self
                .samples
                .iter()
                .filter(|s| subjects.contains(&s.subject))
                .cloned()
                .collect(),
        }
    }
}

fn side_str(side: Side) -> &'static str {
    match side {
        Side::Left => "left",
        Side::Right => "right",
    }
}

/// Refuses to touch an existing dataset unless `force`, in which case the old
/// index and blobs are removed first.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    let index = dir.join(INDEX_FILE);
    if index.exists() {
        if !force {
            return Err(Error::Exists(index));
        }
        fs::remove_file(&index).map_err(|e| Error::io(&index, e))?;
        let blobs = dir.join(BLOB_DIR);
        if blobs.exists() {
            fs::remove_dir_all(&blobs).map_err(|e| Error::io(&blobs, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `index.jsonl` plus one container per tensor under `blobs/`.
/// Each distinct key-frame is stored once.
pub fn write_dataset(dir: &Path, ds: &StrideDataset, force: bool) -> Result<()> {
    prepare_dir(dir, force)?;
    let mut frames: HashMap<*const Tensor<f32>, String> = HashMap::new();
    let mut frame_count: HashMap<(u32, Side), usize> = HashMap::new();
    let mut frame_path = |img: &Arc<Tensor<f32>>, subject: u32, side: Side| -> Result<String> {
        if let Some(p) = frames.get(&Arc::as_ptr(img)) {
            return Ok(p.clone());
        }
        let n = frame_count.entry((subject, side)).or_insert(0);
        let rel = format!("{BLOB_DIR}/s{subject:03}_{}/frame_{:05}.bin", side_str(side), *n);
        *n += 1;
        write_f32(&dir.join(&rel), img)?;
        frames.insert(Arc::as_ptr(img), rel.clone());
        Ok(rel)
    };

    let index_path = dir.join(INDEX_FILE);
    let file = fs::File::create(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut out = BufWriter::new(file);
    for s in &ds.samples {
        let stem = format!("{BLOB_DIR}/s{:03}_{}/stride_{:05}", s.subject, side_str(s.side), s.stride_id);
        let rec = IndexRecord {
            subject: s.subject,
            terrain: s.terrain,
            prev_terrain: s.prev_terrain,
            side: s.side,
            stride_id: s.stride_id,
            k_path: format!("{stem}_K.bin"),
            i_prev_path: frame_path(&s.image_prev, s.subject, s.side)?,
            i_cur_path: frame_path(&s.image_cur, s.subject, s.side)?,
            a_path: format!("{stem}_A.bin"),
        };
        write_f32(&dir.join(&rec.k_path), &s.kinematics)?;
        write_f32(&dir.join(&rec.a_path), &s.target)?;
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(&index_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&index_path, e))
}

fn resolve(dir: &Path, rel: &str, line: usize) -> Result<PathBuf> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(Error::Contract(format!(
            "{INDEX_FILE} line {line}: path {rel:?} must stay inside the dataset directory"
        )));
    }
    Ok(dir.join(p))
}

/// Loads every record of `dir/index.jsonl`, reading each referenced
/// key-frame once.
pub fn load_dataset(dir: &Path) -> Result<StrideDataset> {
    let index_path = dir.join(INDEX_FILE);
    let file = fs::File::open(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut frames: HashMap<String, Arc<Tensor<f32>>> = HashMap::new();
    let mut samples = Vec::new();
    let mut line_start = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&index_path, e))?;
        let offset = line_start;
        line_start += line.len() + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: IndexRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: index_path.clone(),
            offset: offset + e.column().saturating_sub(1),
            msg: format!("line {}: {e}", i + 1),
        })?;
        let mut frame = |rel: &str| -> Result<Arc<Tensor<f32>>> {
            if let Some(f) = frames.get(rel) {
                return Ok(f.clone());
            }
            let f = Arc::new(read_f32(&resolve(dir, rel, i + 1)?)?);
            frames.insert(rel.to_string(), f.clone());
            Ok(f)
        };
        let image_prev = frame(&rec.i_prev_path)?;
        let image_cur = frame(&rec.i_cur_path)?;
        samples.push(StrideSample {
            kinematics: read_f32(&resolve(dir, &rec.k_path, i + 1)?)?,
            image_prev,
            image_cur,
            target: read_f32(&resolve(dir, &rec.a_path, i + 1)?)?,
            terrain: rec.terrain,
            prev_terrain: rec.prev_terrain,
            subject: rec.subject,
            side: rec.side,
            stride_id: rec.stride_id,
        });
    }
    Ok(StrideDataset { samples })
}
