//! Versioned binary container for trained models.
//!
//! Layout: magic + format version, a JSON header (kind string plus
//! arbitrary metadata), then named payloads — tensors stored as raw
//! little-endian `f64` and opaque byte blobs (used for nested models).
//! Floats round-trip bit-exactly, so save/load/predict gives identical
//! scores.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 6] = b"APML\x01\n";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
}

/// A model file in memory: kind tag, JSON metadata, named payloads.
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
    pub bytes: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.to_string(),
            meta,
            tensors: Vec::new(),
            bytes: Vec::new(),
        }
    }

    pub fn push_tensor(&mut self, name: &str, tensor: Tensor) {
        self.tensors.push((name.to_string(), tensor));
    }

    pub fn push_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.bytes.push((name.to_string(), bytes));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Data(format!("model file has no tensor `{name}`")))
    }

    pub fn byte_blob(&self, name: &str) -> Result<&[u8]> {
        self.bytes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::Data(format!("model file has no blob `{name}`")))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let header = serde_json::to_vec(&Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::Data(format!("unencodable model header: {e}")))?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;

        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.tensors {
            write_name(&mut w, name)?;
            match tensor.shape() {
                Shape::Vector(n) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&(n as u64).to_le_bytes())?;
                }
                Shape::Matrix(r, c) => {
                    w.write_all(&[2u8])?;
                    w.write_all(&(r as u64).to_le_bytes())?;
                    w.write_all(&(c as u64).to_le_bytes())?;
                }
            }
            for v in tensor.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }

        w.write_all(&(self.bytes.len() as u32).to_le_bytes())?;
        for (name, blob) in &self.bytes {
            write_name(&mut w, name)?;
            w.write_all(&(blob.len() as u64).to_le_bytes())?;
            w.write_all(blob)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Data("not a model file (truncated magic)".into()))?;
        if &magic != MAGIC {
            return Err(Error::Data("not a model file (bad magic)".into()));
        }
        let header_len = read_u64(&mut r)? as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Data(format!("bad model header: {e}")))?;

        let n_tensors = read_u32(&mut r)?;
        let mut tensors = Vec::with_capacity(n_tensors as usize);
        for _ in 0..n_tensors {
            let name = read_name(&mut r)?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let shape = match tag[0] {
                1 => Shape::Vector(read_u64(&mut r)? as usize),
                2 => {
                    let rows = read_u64(&mut r)? as usize;
                    let cols = read_u64(&mut r)? as usize;
                    Shape::Matrix(rows, cols)
                }
                t => return Err(Error::Data(format!("unknown tensor shape tag {t}"))),
            };
            let mut data = vec![0.0f64; shape.len()];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            tensors.push((name, Tensor::new(shape, data)?));
        }

        let n_blobs = read_u32(&mut r)?;
        let mut bytes = Vec::with_capacity(n_blobs as usize);
        for _ in 0..n_blobs {
            let name = read_name(&mut r)?;
            let len = read_u64(&mut r)? as usize;
            let mut blob = vec![0u8; len];
            r.read_exact(&mut blob)?;
            bytes.push((name, blob));
        }

        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            tensors,
            bytes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Config(format!("cannot open model file {}: {e}", path.display()))
        })?;
        Container::read_from(std::io::BufReader::new(file))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Container::read_from(bytes)
    }
}

fn write_name(w: &mut impl Write, name: &str) -> Result<()> {
    let bytes = name.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Data("payload name too long".into()));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_name(r: &mut impl Read) -> Result<String> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut bytes = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut bytes)?;
    String::from_utf8(bytes).map_err(|_| Error::Data("payload name is not UTF-8".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn roundtrip_preserves_everything_bitwise() {
        let mut c = Container::new("test-kind", json!({"alpha": 1.0, "note": "x"}));
        c.push_tensor("v", Tensor::vector(vec![0.1, -2.5e-307, f64::MAX]));
        c.push_tensor(
            "m",
            Tensor::matrix(2, 2, vec![1.0 / 3.0, 0.0, -0.0, 42.0]).unwrap(),
        );
        c.push_bytes("nested", vec![1, 2, 3, 255]);

        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind, "test-kind");
        assert_eq!(back.meta["alpha"], json!(1.0));
        let v = back.tensor("v").unwrap();
        for (a, b) in v.as_slice().iter().zip(c.tensor("v").unwrap().as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.tensor("m").unwrap(), c.tensor("m").unwrap());
        assert_eq!(back.byte_blob("nested").unwrap(), &[1, 2, 3, 255]);
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(Container::from_bytes(b"NOTAMODEL").is_err());
    }

    #[test]
    fn missing_tensor_is_data_error() {
        let c = Container::new("k", json!({}));
        assert!(matches!(c.tensor("absent"), Err(Error::Data(_))));
    }
}
