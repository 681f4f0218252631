//! Single-file model checkpoints.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! magic      8 bytes  "NIDSMOE\0"
//! version    u32
//! header     u64 length + UTF-8 JSON (dtype, model config, pipeline stats, metadata)
//! tensors    u32 count, then per tensor:
//!              u32 name length + name, u8 trainable, u32 ndim, ndim * u64 dims,
//!              numel * f64 values
//! checksum   32 bytes, SHA-256 of everything above
//! ```
//!
//! Values are widened to f64 on disk; the dtype tag makes sure a file is only
//! loaded back into the element type it came from, so the round trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PipelineStats;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::{ModelConfig, TrainConfig};
use super::model::Model;
use super::trainer::EpochRecord;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NIDSMOE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint holds {found} tensors, cannot load as {expected}")]
    Dtype { found: String, expected: &'static str },
    #[error("checkpoint does not match the model structure: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epochs_run: usize,
    pub seed: u64,
    pub final_epoch: Option<EpochRecord>,
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: ModelConfig,
    pipeline: Option<PipelineStats>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: Model<T>,
    pub pipeline: Option<PipelineStats>,
    pub meta: CheckpointMeta,
}

pub fn checkpoint_bytes<T: Scalar>(model: &Model<T>, pipeline: Option<&PipelineStats>, meta: &CheckpointMeta) -> Vec<u8> {
    let header = Header {
        dtype: T::DTYPE.to_string(),
        model: model.config.clone(),
        pipeline: pipeline.cloned(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let entries = model.store.entries();
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.push(u8::from(e.trainable));
        buf.extend_from_slice(&(e.tensor.ndim() as u32).to_le_bytes());
        for d in e.tensor.shape() {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in e.tensor.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<T>,
    pipeline: Option<&PipelineStats>,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    std::fs::write(path, checkpoint_bytes(model, pipeline, meta))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, CheckpointError> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Integrity("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and verifies a checkpoint. Nothing is built unless the checksum,
/// version, dtype and every tensor shape check out.
pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic);
    }
    if bytes.len() < 8 + 4 + 32 {
        return Err(CheckpointError::Integrity("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Integrity("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = r.u64()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| CheckpointError::Integrity(format!("header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(CheckpointError::Dtype {
            found: header.dtype,
            expected: T::DTYPE,
        });
    }
    let mut model = Model::<T>::new(header.model, header.meta.seed);
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(CheckpointError::Structure(format!("{count} tensors, model has {}", model.store.len())));
    }
    for entry in model.store.entries_mut() {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        let trainable = r.take(1)?[0] != 0;
        let ndim = r.u32()? as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
        if name != entry.name || trainable != entry.trainable || shape != entry.tensor.shape() {
            return Err(CheckpointError::Structure(format!(
                "tensor {name:?} {shape:?} does not match {:?} {:?}",
                entry.name,
                entry.tensor.shape()
            )));
        }
        let data: Vec<T> = (0..entry.tensor.numel())
            .map(|_| r.take(8).map(|b| T::from_f64_lossy(f64::from_le_bytes(b.try_into().unwrap()))))
            .collect::<Result<_, _>>()?;
        entry.tensor = Tensor::new(shape, data)
            .expect("shape checked above")
            .with_requires_grad(trainable);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Integrity("trailing bytes".into()));
    }
    Ok(Checkpoint {
        model,
        pipeline: header.pipeline,
        meta: header.meta,
    })
}
