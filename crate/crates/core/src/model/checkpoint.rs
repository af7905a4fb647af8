//! Versioned binary container of named tensors with a SHA-256 trailer.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"LPFL"
//! version  u16            (currently 1)
//! kind     u8             (1 checkpoint, 2 payload, 3 optimizer state)
//! meta     u32 len + UTF-8 JSON
//! count    u32
//! tensor   u16 name len + UTF-8 name
//!          u8 rank, u32 × rank dims
//!          f64 × prod(dims), row-major
//! digest   32 bytes, SHA-256 of every preceding byte
//! ```
//!
//! Full checkpoints carry the model config in `meta` plus base and adapter
//! tensors. Adapter payloads carry adapter tensors only, so they can be
//! exchanged without `W0`.

use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::mlm::{MicroMlm, TrainMode};
use super::ModelError;
use crate::numerics::{ParamId, ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"LPFL";
pub const FORMAT_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ArchiveKind {
    Checkpoint = 1,
    Payload = 2,
    OptimizerState = 3,
}

impl ArchiveKind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Checkpoint),
            2 => Some(Self::Payload),
            3 => Some(Self::OptimizerState),
            _ => None,
        }
    }
}

/// Decoded container.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorArchive {
    pub kind: ArchiveKind,
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorArchive {
    pub fn new(kind: ArchiveKind, meta: Value) -> Self {
        Self {
            kind,
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn from_store(kind: ArchiveKind, meta: Value, store: &ParamStore) -> Self {
        Self {
            kind,
            meta,
            tensors: store.iter().map(|(id, t)| (id.to_string(), (**t).clone())).collect(),
        }
    }

    pub fn to_store(&self) -> ParamStore {
        self.tensors
            .iter()
            .map(|(name, t)| (ParamId::new(name.clone()), t.clone()))
            .collect()
    }

    /// Bytes occupied by tensor values alone (8 per entry).
    pub fn data_bytes(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len() * 8).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("JSON values always serialize");
        let mut out = Vec::with_capacity(64 + meta.len() + self.data_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < MAGIC.len() + 2 + 1 + 4 + 4 + DIGEST_LEN {
            return Err(ModelError::Format("truncated container".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(ModelError::ChecksumMismatch);
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let kind_byte = r.take(1)?[0];
        let kind =
            ArchiveKind::from_u8(kind_byte).ok_or_else(|| ModelError::Format(format!("unknown kind {kind_byte}")))?;
        let meta_len = u32::from_le_bytes(r.array()?) as usize;
        let meta: Value =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| ModelError::Format(format!("metadata: {e}")))?;
        let count = u32::from_le_bytes(r.array()?) as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array()?) as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.array()?) as usize);
            }
            let len: usize = shape.iter().product();
            let raw = r.take(len * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| ModelError::Format(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(ModelError::Format("trailing bytes before digest".into()));
        }
        Ok(Self { kind, meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.buf.len() {
            return Err(ModelError::Format("truncated container".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Full model checkpoint: config, base weights and adapters.
pub fn checkpoint_archive(model: &MicroMlm) -> TensorArchive {
    let meta = serde_json::json!({
        "format": "lpfl-checkpoint",
        "config": model.config(),
        "mode": model.mode(),
    });
    TensorArchive::from_store(ArchiveKind::Checkpoint, meta, model.params())
}

pub fn save_checkpoint(model: &MicroMlm, path: &Path) -> Result<(), ModelError> {
    checkpoint_archive(model).write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<MicroMlm, ModelError> {
    model_from_archive(&TensorArchive::read(path)?)
}

pub fn model_from_archive(archive: &TensorArchive) -> Result<MicroMlm, ModelError> {
    if archive.kind != ArchiveKind::Checkpoint {
        return Err(ModelError::Format("not a checkpoint container".into()));
    }
    let config: ModelConfig = serde_json::from_value(archive.meta["config"].clone())
        .map_err(|e| ModelError::Format(format!("config: {e}")))?;
    let mode: TrainMode =
        serde_json::from_value(archive.meta["mode"].clone()).map_err(|e| ModelError::Format(format!("mode: {e}")))?;
    MicroMlm::from_params(config, archive.to_store(), mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> MicroMlm {
        let mut cfg = ModelConfig::new(30);
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 16;
        cfg.max_len = 12;
        cfg.lora_rank = 2;
        MicroMlm::init(cfg, 3).unwrap()
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let model = tiny();
        let bytes = checkpoint_archive(&model).encode();
        let back = model_from_archive(&TensorArchive::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = checkpoint_archive(&tiny()).encode();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(matches!(
            TensorArchive::decode(&bytes),
            Err(ModelError::ChecksumMismatch)
        ));
        assert!(TensorArchive::decode(&bytes[..10]).is_err());
    }

    #[test]
    fn adapter_payload_excludes_base_weights() {
        let model = tiny();
        let archive = TensorArchive::from_store(ArchiveKind::Payload, serde_json::json!({}), &model.adapter_params());
        let decoded = TensorArchive::decode(&archive.encode()).unwrap();
        assert!(decoded
            .tensors
            .iter()
            .all(|(n, _)| n.ends_with(".lora_a") || n.ends_with(".lora_b")));
        assert_eq!(decoded.data_bytes(), model.config().adapter_param_count() * 8);
    }
}
