//! Binary tensor container and named-entry checkpoint files.
//!
//! Container layout, all little-endian:
//!
//! ```text
//! b"DLGT" | version: u16 | rank: u8 | dims: u32 * rank | dtype: u8 | payload
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64. A checkpoint file is a `u32` entry
//! count followed by, per entry, `u32` name length, the UTF-8 name, `u64`
//! container length and the container bytes.

use std::path::Path;

use super::{Scalar, Tensor, SCALAR_DTYPE};
use crate::error::{DlgError, Result};

pub const MAGIC: &[u8; 4] = b"DLGT";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;

/// Decoded container payload with its dims.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

impl Container {
    #[allow(clippy::unnecessary_cast)]
    pub fn from_tensor(t: &Tensor) -> Self {
        let payload = if SCALAR_DTYPE == DTYPE_F32 {
            Payload::F32(t.data().iter().map(|&v| v as f32).collect())
        } else {
            Payload::F64(t.data().iter().map(|&v| v as f64).collect())
        };
        Self {
            dims: t.shape().to_vec(),
            payload,
        }
    }

    pub fn f64_values(dims: &[usize], values: Vec<f64>) -> Self {
        Self {
            dims: dims.to_vec(),
            payload: Payload::F64(values),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let data: Vec<Scalar> = match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as Scalar).collect(),
            Payload::F64(v) => v.iter().map(|&x| x as Scalar).collect(),
        };
        Tensor::new(&self.dims, data)
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::F64(v) => v.clone(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => {
                out.push(DTYPE_F32);
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::F64(v) => {
                out.push(DTYPE_F64);
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    /// Decode one container occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "tensor container");
        let c = Self::read(&mut r)?;
        if r.pos != bytes.len() {
            return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(c)
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        if r.take(4)? != MAGIC {
            return Err(DlgError::Parse {
                what: r.what.into(),
                offset: r.pos - 4,
                msg: "bad magic, expected DLGT".into(),
            });
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let rank = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(r.array()?) as usize);
        }
        let numel: usize = dims.iter().product();
        let dtype = r.take(1)?[0];
        let payload = match dtype {
            DTYPE_F32 => Payload::F32(
                r.take(numel * 4)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DTYPE_F64 => Payload::F64(
                r.take(numel * 8)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            other => return Err(r.err(format!("unknown dtype {other}"))),
        };
        Ok(Self { dims, payload })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            what,
        }
    }

    fn err(&self, msg: String) -> DlgError {
        DlgError::Parse {
            what: self.what.into(),
            offset: self.pos,
            msg,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Serialize named containers in the given order.
pub fn encode_entries(entries: &[(String, Container)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, c) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let bytes = c.encode();
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, Container)>> {
    let mut r = Reader::new(bytes, "checkpoint");
    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u32::from_le_bytes(r.array()?) as usize;
        let start = r.pos;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| DlgError::Parse {
                what: "checkpoint".into(),
                offset: start,
                msg: format!("entry name is not UTF-8: {e}"),
            })?
            .to_string();
        let clen = u64::from_le_bytes(r.array()?) as usize;
        let cstart = r.pos;
        let body = r.take(clen)?;
        let c = Container::decode(body).map_err(|e| match e {
            DlgError::Parse { offset, msg, .. } => DlgError::Parse {
                what: format!("checkpoint entry {name}"),
                offset: cstart + offset,
                msg,
            },
            other => other,
        })?;
        entries.push((name, c));
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn write_entries(path: &Path, entries: &[(String, Container)]) -> Result<()> {
    std::fs::write(path, encode_entries(entries)).map_err(|e| DlgError::io(path, e))
}

pub fn read_entries(path: &Path) -> Result<Vec<(String, Container)>> {
    let bytes = std::fs::read(path).map_err(|e| DlgError::io(path, e))?;
    decode_entries(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[2, 1], vec![1.0, -2.0]).unwrap();
        let bytes = Container::from_tensor(&t).encode();
        assert_eq!(&bytes[..4], b"DLGT");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 2);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[11..15].try_into().unwrap()), 1);
        assert_eq!(bytes[15], SCALAR_DTYPE);
    }

    #[test]
    fn truncated_container_reports_offset() {
        let t = Tensor::zeros(&[4]);
        let bytes = Container::from_tensor(&t).encode();
        let err = Container::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            DlgError::Parse { offset, .. } => assert_eq!(offset, 12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Container::decode(b"DLGX\x01\x00").is_err());
    }

    proptest! {
        #[test]
        fn entries_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), name in "[a-z.]{1,12}") {
            let t = Tensor::new(&[values.len()], values.iter().map(|&v| v as Scalar).collect()).unwrap();
            let entries = vec![
                (name.clone(), Container::from_tensor(&t)),
                ("meta.step".to_string(), Container::f64_values(&[1], vec![values[0]])),
            ];
            let bytes = encode_entries(&entries);
            let back = decode_entries(&bytes).unwrap();
            prop_assert_eq!(&back, &entries);
            prop_assert_eq!(encode_entries(&back), bytes);
        }
    }
}
