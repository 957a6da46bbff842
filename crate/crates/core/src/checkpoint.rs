//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "S2M1"                      magic
//! u32                         format version
//! u32 + bytes                 model kind tag (UTF-8)
//! u64 + bytes                 metadata (UTF-8 JSON: configs, statistics,
//!                             skeleton, sensor layout, training state)
//! u32                         tensor count
//! per tensor:
//!   u32 + bytes               name
//!   u8                        dtype (0 = f32)
//!   u32, u64 * ndim           shape
//!   u64                       byte offset into the payload
//! payload                     f32 values, little-endian
//! [u8; 32]                    SHA-256 of everything above
//! ```
//!
//! Optimizer moments travel as extra tensors named `<param>.adam_m` and
//! `<param>.adam_v` so a run can resume exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use insole_nn::{Float, Module, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{MotionError, Result};

pub const MAGIC: &[u8; 4] = b"S2M1";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

pub const KIND_POSE: &str = "pose-denoiser";
pub const KIND_DISPLACEMENT: &str = "displacement-predictor";
pub const KIND_MLP_BASELINE: &str = "mlp-baseline";
pub const KIND_TRANSFORMER_BASELINE: &str = "transformer-baseline";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

fn corrupt(msg: impl Into<String>) -> MotionError {
    MotionError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
}

impl Checkpoint {
    pub fn new(kind: &str, metadata: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            metadata,
            tensors: Vec::new(),
        }
    }

    /// Adds every parameter of `model`, and optionally its Adam moments.
    pub fn with_model<T: Float, M: Module<T>>(mut self, model: &M, optimizer_state: bool) -> Self {
        model.visit(&mut |p| {
            let f32s = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64() as f32).collect::<Vec<_>>();
            self.tensors.push(NamedTensor {
                name: p.name.clone(),
                shape: p.shape().to_vec(),
                data: f32s(&p.value),
            });
            if optimizer_state {
                for (suffix, t) in [("adam_m", &p.adam_m), ("adam_v", &p.adam_v)] {
                    self.tensors.push(NamedTensor {
                        name: format!("{}.{suffix}", p.name),
                        shape: p.shape().to_vec(),
                        data: f32s(t),
                    });
                }
            }
        });
        self
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn has_optimizer_state(&self) -> bool {
        self.tensors.iter().any(|t| t.name.ends_with(".adam_m"))
    }

    /// Copies values (and moments when present) into a model of the same
    /// architecture. Every parameter must be present with its exact shape.
    pub fn restore<T: Float, M: Module<T>>(&self, model: &mut M) -> Result<()> {
        let mut err = None;
        model.visit_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            let mut load = |name: &str, dst: &mut Tensor<T>, required: bool| {
                match self.tensor(name) {
                    Some(t) if t.shape == dst.shape() => {
                        for (d, s) in dst.data_mut().iter_mut().zip(&t.data) {
                            *d = T::of(*s as f64);
                        }
                    }
                    Some(t) => {
                        err = Some(corrupt(format!(
                            "tensor {name} has shape {:?}, model expects {:?}",
                            t.shape,
                            dst.shape()
                        )))
                    }
                    None if required => err = Some(corrupt(format!("missing tensor {name}"))),
                    None => {}
                }
            };
            load(&p.name.clone(), &mut p.value, true);
            load(&format!("{}.adam_m", p.name), &mut p.adam_m, false);
            load(&format!("{}.adam_v", p.name), &mut p.adam_v, false);
        });
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("JSON value serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.kind.len() as u32).to_le_bytes());
        out.extend_from_slice(self.kind.as_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.data.len() as u64;
        }
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..4] != MAGIC {
            return Err(corrupt("not a checkpoint (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("content hash mismatch"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let kind = r.string(n)?;
        let n = r.len64()?;
        let metadata = serde_json::from_slice(r.take(n)?).map_err(|e| corrupt(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.string(n)?;
            if r.u8()? != DTYPE_F32 {
                return Err(corrupt(format!("tensor {name}: unsupported dtype")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.len64()).collect::<Result<Vec<_>>>()?;
            let offset = r.len64()?;
            table.push((name, shape, offset));
        }
        let payload = &body[r.pos..];
        let mut tensors = Vec::with_capacity(table.len());
        for (name, shape, offset) in table {
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| corrupt(format!("tensor {name}: size overflow")))?;
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| corrupt(format!("tensor {name} runs past the payload")))?;
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self { kind, metadata, tensors })
    }

    /// Writes through a temporary file and a rename, so readers never see a
    /// half-written checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and checks the model kind tag.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::load(path)?;
        if c.kind != kind {
            return Err(corrupt(format!("{} holds a {} model, expected {kind}", path.display(), c.kind)));
        }
        Ok(c)
    }
}
