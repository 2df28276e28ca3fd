//! Single-tensor binary container.
//!
//! A one-line JSON header (`{"shape":[..],"dtype":"f32"|"f64","order":"row-major"}`)
//! terminated by `\n`, followed by little-endian IEEE-754 values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sftik_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    shape: Vec<usize>,
    dtype: String,
    order: String,
}

/// A decoded container of either precision.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn into_f32(self) -> Tensor<f32> {
        match self {
            AnyTensor::F32(t) => t,
            AnyTensor::F64(t) => t.cast(),
        }
    }

    pub fn into_f64(self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t,
        }
    }
}

trait LeBytes: Scalar {
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl LeBytes for f32 {
    const SIZE: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl LeBytes for f64 {
    const SIZE: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

fn encode<T: LeBytes>(t: &Tensor<T>) -> Vec<u8> {
    let header = Header {
        shape: t.shape().to_vec(),
        dtype: T::DTYPE.to_string(),
        order: "row-major".into(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(t.numel() * T::SIZE);
    for &v in t.data() {
        v.put(&mut out);
    }
    out
}

pub fn encode_f32(t: &Tensor<f32>) -> Vec<u8> {
    encode(t)
}

pub fn encode_f64(t: &Tensor<f64>) -> Vec<u8> {
    encode(t)
}

fn decode_payload<T: LeBytes>(shape: Vec<usize>, payload: &[u8], path: &Path) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let expected = n * T::SIZE;
    if payload.len() != expected {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            msg: format!(
                "payload has {} bytes, shape {shape:?} of {} needs {expected}",
                payload.len(),
                T::DTYPE
            ),
        });
    }
    let data = payload.chunks_exact(T::SIZE).map(T::take).collect();
    Ok(Tensor::new(shape, data)?)
}

/// Decodes container bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<AnyTensor> {
    let format = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset,
        msg,
    };
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format(bytes.len(), "header is not newline-terminated".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline]).map_err(|e| {
        // serde_json reports 1-based columns on the single header line
        format(e.column().saturating_sub(1), e.to_string())
    })?;
    if header.order != "row-major" {
        return Err(format(0, format!("unsupported order {:?}", header.order)));
    }
    let payload = &bytes[newline + 1..];
    match header.dtype.as_str() {
        "f32" => Ok(AnyTensor::F32(decode_payload(header.shape, payload, path)?)),
        "f64" => Ok(AnyTensor::F64(decode_payload(header.shape, payload, path)?)),
        other => Err(format(0, format!("unknown dtype {other:?}"))),
    }
}

pub fn write_container(path: &Path, tensor: &AnyTensor) -> Result<()> {
    let bytes = match tensor {
        AnyTensor::F32(t) => encode(t),
        AnyTensor::F64(t) => encode(t),
    };
    write_bytes(path, &bytes)
}

pub fn write_f32(path: &Path, tensor: &Tensor<f32>) -> Result<()> {
    write_bytes(path, &encode(tensor))
}

pub fn write_f64(path: &Path, tensor: &Tensor<f64>) -> Result<()> {
    write_bytes(path, &encode(tensor))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<AnyTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_f32(path: &Path) -> Result<Tensor<f32>> {
    Ok(read_container(path)?.into_f32())
}
