//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        8 bytes  "GAITCKPT"
//! version      u32
//! model_kind   u32 length + UTF-8
//! header       u32 length + UTF-8 JSON  {"layers": [...], "meta": {...}}
//! tensors      u32 count, then per tensor: u32 rank + rank x u64 dims
//! values       f64 for every tensor, in declaration order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GAITCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_kind: String,
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read, limit: usize) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > limit {
        return Err(Error::InvalidCheckpoint(format!("string of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::InvalidCheckpoint("non UTF-8 string".into()))
}

impl Checkpoint {
    pub fn new(model_kind: &str, layers: Vec<LayerSpec>, meta: serde_json::Value, tensors: Vec<Tensor>) -> Self {
        Checkpoint {
            model_kind: model_kind.to_string(),
            header: CheckpointHeader { layers, meta },
            tensors,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_str(w, &self.model_kind)?;
        write_str(w, &serde_json::to_string(&self.header)?)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
        }
        let mut buf = Vec::with_capacity(1 << 16);
        for t in &self.tensors {
            for chunk in t.data().chunks(8192) {
                buf.clear();
                for v in chunk {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::InvalidCheckpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::InvalidCheckpoint(format!("unsupported version {version}")));
        }
        let model_kind = read_str(r, 1 << 10)?;
        let header: CheckpointHeader = serde_json::from_str(&read_str(r, 1 << 24)?)?;
        let count = read_u32(r)? as usize;
        let mut shapes = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let rank = read_u32(r)? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::InvalidCheckpoint(format!("bad tensor rank {rank}")));
            }
            let dims = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            shapes.push(dims);
        }
        let mut tensors = Vec::with_capacity(count);
        for shape in shapes {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor::new(shape, data).map_err(|e| Error::InvalidCheckpoint(e.to_string()))?);
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::InvalidCheckpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { model_kind, header, tensors })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.model_kind != kind {
            return Err(Error::InvalidCheckpoint(format!(
                "expected model kind `{kind}`, found `{}`",
                self.model_kind
            )));
        }
        Ok(())
    }

    /// Copies stored tensors into `targets`, checking count and shapes.
    pub fn restore_into(&self, targets: Vec<&mut Tensor>) -> Result<()> {
        if targets.len() != self.tensors.len() {
            return Err(Error::InvalidCheckpoint(format!(
                "expected {} tensors, found {}",
                targets.len(),
                self.tensors.len()
            )));
        }
        for (dst, src) in targets.into_iter().zip(&self.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::InvalidCheckpoint(format!(
                    "tensor shape {:?} does not match model {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint::new(
            "autoencoder",
            vec![LayerSpec::Relu, LayerSpec::Conv2d { in_channels: 1, out_channels: 2, kernel: 3 }],
            serde_json::json!({"seed": 7}),
            vec![
                Tensor::new(vec![2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
                Tensor::new(vec![1], vec![std::f64::consts::PI]).unwrap(),
            ],
        );
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model_kind, "autoencoder");
        assert_eq!(back.tensors[0].data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::new("x", vec![], serde_json::Value::Null, vec![Tensor::zeros(&[3])]);
        let mut bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
    }
}
