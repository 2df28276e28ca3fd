//! Raw recording formats: IMU CSV and the depth frame index.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::container::read_f32;
use crate::error::{Error, Result};
use crate::signal::depth::{preprocess_depth_to, DepthFrame};
use crate::signal::stream::{ImuStream, CHANNEL_NAMES, N_CHANNELS};
use crate::types::{Side, Terrain};

/// Reads `t,ax1,...,gz3,thigh_angle_deg` rows.
pub fn read_imu_csv(path: &Path, side: Side) -> Result<ImuStream> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("t").chain(CHANNEL_NAMES).collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("expected header {}", expected.join(",")),
        });
    }
    let mut timestamps = Vec::new();
    let mut channels = vec![Vec::new(); N_CHANNELS];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let offset = record.position().map_or(0, |p| p.byte() as usize);
        let mut values = record.iter().map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset,
                msg: format!("row {}: {e}", row + 1),
            })
        });
        timestamps.push(values.next().unwrap()?);
        for ch in channels.iter_mut() {
            ch.push(values.next().unwrap()?);
        }
    }
    ImuStream::new(timestamps, channels, side)
}

pub fn write_imu_csv(path: &Path, stream: &ImuStream) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("t").chain(CHANNEL_NAMES))?;
    for i in 0..stream.len() {
        let row = std::iter::once(stream.timestamps[i])
            .chain(stream.channels.iter().map(|c| c[i]))
            .map(|v| v.to_string());
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One line of the frame index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: f64,
    pub path: PathBuf,
    pub terrain: Terrain,
}

pub fn read_frame_index(path: &Path) -> Result<Vec<FrameRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            let rec = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: offset + e.column().saturating_sub(1),
                msg: e.to_string(),
            })?;
            out.push(rec);
        }
        offset += line.len() + 1;
    }
    Ok(out)
}

/// Loads and preprocesses every raw depth frame listed in `index_path`;
/// frame paths resolve relative to the index file.
pub fn load_depth_frames(index_path: &Path, image_size: usize) -> Result<Vec<DepthFrame>> {
    let base = index_path.parent().unwrap_or(Path::new("."));
    let mut frames = read_frame_index(index_path)?
        .into_iter()
        .map(|rec| {
            let raw = read_f32(&base.join(&rec.path))?;
            Ok(DepthFrame {
                timestamp: rec.t,
                pixels: Arc::new(preprocess_depth_to(&raw, image_size, image_size)?),
                terrain: rec.terrain,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(frames)
}
