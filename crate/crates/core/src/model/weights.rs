//! Weight container: `LMXW` magic, u32 version, u64 header length, a JSON
//! header listing each tensor's name, shape and byte offset, then the tensor
//! payloads as little-endian f32. All integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LMXW";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for t in params.tensors() {
        let (r, c) = t.shape();
        entries.push(TensorEntry {
            name: t.name().to_string(),
            shape: vec![r, c],
            offset: payload.len(),
        });
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        dtype: "f32".into(),
        tensors: entries,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::WeightFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::WeightFormat("header overruns file".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])?;
    if header.dtype != "f32" {
        return Err(Error::WeightFormat(format!("unsupported dtype {}", header.dtype)));
    }
    let payload = &bytes[payload_start..];
    let mut named = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let end = e
            .offset
            .checked_add(n * 4)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| Error::WeightFormat(format!("tensor {} overruns payload", e.name)))?;
        let data = payload[e.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        named.push((e.name, e.shape, data));
    }
    ModelParams::from_named(named)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = to_bytes(params);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_at_f32() {
        let p = ModelParams::init(9);
        let q = from_bytes(&to_bytes(&p)).unwrap();
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.name(), b.name());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        // f32-representable parameters survive bit-exactly
        assert_eq!(to_bytes(&q), to_bytes(&from_bytes(&to_bytes(&q)).unwrap()));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&ModelParams::init(0));
        assert!(from_bytes(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(&bytes[..bytes.len() - 4]).is_err());
    }
}
