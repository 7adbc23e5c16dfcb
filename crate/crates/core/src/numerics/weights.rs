//! `LOHGW001` weight container.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   b"LOHGW001"
//! hlen     u64 LE    length of the JSON header in bytes
//! header   hlen      UTF-8 JSON: {"metadata": ..., "params": [ParamEntry, ...]}
//! payload  ...       raw little-endian values; offsets are relative to the
//!                    first payload byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"LOHGW001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub nbytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    metadata: serde_json::Value,
    params: Vec<ParamEntry>,
}

pub fn encode<T: Real>(params: &ParamStore<T>, metadata: serde_json::Value) -> Result<Vec<u8>> {
    let width = std::mem::size_of::<T>();
    let mut entries = Vec::with_capacity(params.len());
    let mut payload = Vec::with_capacity(params.num_scalars() * width);
    for (name, t) in params.iter() {
        let offset = payload.len();
        for v in t.data() {
            match width {
                4 => payload.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
                _ => payload.extend_from_slice(&v.f64().to_le_bytes()),
            }
        }
        entries.push(ParamEntry {
            name: name.to_string(),
            dtype: T::DTYPE.to_string(),
            shape: t.shape().to_vec(),
            offset,
            nbytes: payload.len() - offset,
        });
    }
    let header = serde_json::to_vec(&Header {
        metadata,
        params: entries,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes a container, converting stored values to `T`.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(ParamStore<T>, serde_json::Value)> {
    if bytes.len() < 16 {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: "file shorter than magic and header length".into(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic, expected LOHGW001".into(),
        });
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or(
        Error::Format {
            offset: 8,
            msg: format!("header length {hlen} exceeds file size"),
        },
    )?;
    let header: Header = serde_json::from_slice(&bytes[16..payload_start]).map_err(|e| {
        Error::Format {
            offset: 16,
            msg: format!("header is not valid JSON: {e}"),
        }
    })?;
    let payload = &bytes[payload_start..];
    let mut store = ParamStore::new();
    for p in header.params {
        let width = match p.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => {
                return Err(Error::Format {
                    offset: 16,
                    msg: format!("unsupported dtype {other} for {}", p.name),
                })
            }
        };
        let n: usize = p.shape.iter().product();
        if p.nbytes != n * width || p.offset + p.nbytes > payload.len() {
            return Err(Error::Format {
                offset: payload_start + p.offset,
                msg: format!("payload for {} is truncated or mis-sized", p.name),
            });
        }
        let raw = &payload[p.offset..p.offset + p.nbytes];
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| match width {
                4 => T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64),
                _ => T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect();
        store.add(p.name, Tensor::new(&p.shape, data)?);
    }
    Ok((store, header.metadata))
}

pub fn save<T: Real>(
    path: impl AsRef<Path>,
    params: &ParamStore<T>,
    metadata: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(params, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<(ParamStore<T>, serde_json::Value)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(vals: &[f32]) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a.w", Tensor::new(&[vals.len()], vals.to_vec()).unwrap());
        s.add("b", Tensor::new(&[1, 2], vec![3.5, -1.0]).unwrap());
        s
    }

    proptest! {
        #[test]
        fn roundtrip_is_lossless(vals in prop::collection::vec(-1e6f32..1e6, 1..64)) {
            let s = store(&vals);
            let bytes = encode(&s, serde_json::json!({"k": 1.0})).unwrap();
            let (back, meta) = decode::<f32>(&bytes).unwrap();
            prop_assert_eq!(back, s);
            prop_assert_eq!(meta["k"].as_f64(), Some(1.0));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&store(&[1.0]), serde_json::Value::Null).unwrap();
        assert_eq!(&bytes[..8], b"LOHGW001");
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["params"][1]["name"], "b");
        assert_eq!(header["params"][1]["offset"], 4);
        assert_eq!(bytes.len(), 16 + hlen + 12);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let mut bytes = encode(&store(&[1.0, 2.0]), serde_json::Value::Null).unwrap();
        assert!(matches!(decode::<f32>(&bytes[..10]), Err(Error::Format { .. })));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(decode::<f32>(truncated), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Format { offset: 0, .. })));
    }
}
