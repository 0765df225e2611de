use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::normalize::Normalization;
use super::train::TrainingMetadata;
use super::twin::TwinModel;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTWINCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Metadata {
    model: ModelConfig,
    normalization: Normalization,
    training: Option<TrainingMetadata>,
}

/// A decoded checkpoint file.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub model_config: ModelConfig,
    pub normalization: Normalization,
    pub training: Option<TrainingMetadata>,
    /// Named arrays in file order.
    pub arrays: Vec<(String, Tensor)>,
}

impl ModelCheckpoint {
    /// Builds a model with the stored configuration.
    pub fn into_model(self) -> Result<TwinModel> {
        let config = self.model_config.clone();
        self.into_model_with(config)
    }

    /// Builds a model with `config` and fills it from the stored arrays.
    /// Every array must match the shape `config` implies.
    pub fn into_model_with(self, config: ModelConfig) -> Result<TwinModel> {
        let mut model = TwinModel::new(config, self.normalization)?;
        if self.arrays.len() != model.params.len() {
            return Err(Error::CheckpointCorrupt(format!(
                "{} arrays stored, model has {} parameters",
                self.arrays.len(),
                model.params.len()
            )));
        }
        for (p, (name, value)) in model.params.iter_mut().zip(self.arrays) {
            if p.name != name {
                return Err(Error::CheckpointCorrupt(format!("expected array `{}`, found `{name}`", p.name)));
            }
            if p.value.shape() != value.shape() {
                return Err(Error::CheckpointShape {
                    name,
                    expected: p.value.shape().to_vec(),
                    found: value.shape().to_vec(),
                });
            }
            p.value = value;
        }
        Ok(model)
    }
}

/// Serializes `model` into the checkpoint byte layout.
pub fn encode_checkpoint(model: &TwinModel, training: Option<&TrainingMetadata>) -> Result<Vec<u8>> {
    let meta = Metadata {
        model: model.config.clone(),
        normalization: model.norm.clone(),
        training: training.cloned(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::CheckpointCorrupt(format!("metadata: {e}")))?;
    let mut out = Vec::with_capacity(64 + json.len() + 8 * model.params.num_values());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in model.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CheckpointCorrupt(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::CheckpointCorrupt(format!("{what} overflows")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointCorrupt("missing checkpoint header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(Error::CheckpointCorrupt("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CheckpointCorrupt("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let meta_len = r.len("metadata length")?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::CheckpointCorrupt(format!("metadata: {e}")))?;
    let count = r.u32("array count")? as usize;
    let mut arrays = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::CheckpointCorrupt("array name is not UTF-8".into()))?
            .to_owned();
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank).map(|_| r.len("dimension")).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::CheckpointCorrupt(format!("array `{name}` is too large")))?;
        let data = r.take(n, &name)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        arrays.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body.len() {
        return Err(Error::CheckpointCorrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(ModelCheckpoint {
        version,
        model_config: meta.model,
        normalization: meta.normalization,
        training: meta.training,
        arrays,
    })
}

pub fn save_checkpoint(path: &Path, model: &TwinModel, training: Option<&TrainingMetadata>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, training)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
