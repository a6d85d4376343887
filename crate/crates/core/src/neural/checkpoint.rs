//! Binary checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "AGDSTCKP" | u32 version
//! u32 len | model config (UTF-8 JSON)
//! u32 len | vocabulary hash (UTF-8 hex)
//! u32 count | count × tensor record
//! u8 has_optimizer
//!   [u64 step | u32 len | optimizer settings JSON | u32 count | first moments | u32 count | second moments]
//!
//! tensor record: u32 len | name | u32 rank | rank × u32 dim | prod(dims) × f32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::parameter_layout;
use super::optim::{AdamConfig, OptimizerState, Schedule};
use super::tensor::{Parameters, Tensor};
use super::ModelConfig;
use crate::error::{CheckpointError, Error, Result};

pub const MAGIC: &[u8; 8] = b"AGDSTCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: Parameters<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub vocab_hash: String,
}

#[derive(Serialize, Deserialize)]
struct OptimizerSettings {
    schedule: Schedule,
    adam: AdamConfig,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

fn put_tensors(out: &mut Vec<u8>, params: &Parameters<f32>) {
    put_u32(out, params.tensors().len() as u32);
    for t in params.tensors() {
        put_bytes(out, t.name.as_bytes());
        put_u32(out, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(out, d as u32);
        }
        for &x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.count() * 4 + 1024);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        put_bytes(&mut out, &config);
        put_bytes(&mut out, self.vocab_hash.as_bytes());
        put_tensors(&mut out, &self.params);
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                let settings = OptimizerSettings {
                    schedule: opt.schedule.clone(),
                    adam: opt.adam.clone(),
                };
                put_bytes(&mut out, &serde_json::to_vec(&settings).expect("settings serialize"));
                put_tensors(&mut out, &opt.first_moment);
                put_tensors(&mut out, &opt.second_moment);
            }
        }
        out
    }

    /// Parses a checkpoint without checking the vocabulary hash.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let config: ModelConfig = serde_json::from_slice(r.block("config")?)
            .map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
        config
            .validate()
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let vocab_hash = String::from_utf8(r.block("vocabulary hash")?.to_vec())
            .map_err(|_| CheckpointError::Malformed("vocabulary hash is not UTF-8".into()))?;
        let layout = parameter_layout(&config);
        let params = r.tensors(&layout, "parameters")?;
        let optimizer = match r.take(1, "optimizer flag")?[0] {
            0 => None,
            1 => {
                let step = u64::from_le_bytes(r.take(8, "optimizer step")?.try_into().expect("8 bytes"));
                let settings: OptimizerSettings = serde_json::from_slice(r.block("optimizer settings")?)
                    .map_err(|e| CheckpointError::Malformed(format!("optimizer settings: {e}")))?;
                let first_moment = r.tensors(&layout, "first moments")?;
                let second_moment = r.tensors(&layout, "second moments")?;
                Some(OptimizerState {
                    first_moment,
                    second_moment,
                    step,
                    schedule: settings.schedule,
                    adam: settings.adam,
                })
            }
            f => return Err(CheckpointError::Malformed(format!("optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            params,
            optimizer,
            vocab_hash,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated(what));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn block(&mut self, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let len = self.u32(what)? as usize;
        self.take(len, what)
    }

    fn tensors(&mut self, layout: &[(String, Vec<usize>)], what: &'static str) -> Result<Parameters<f32>, CheckpointError> {
        let count = self.u32(what)? as usize;
        if count != layout.len() {
            return Err(CheckpointError::Malformed(format!("{what}: {count} tensors, config implies {}", layout.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, shape) in layout {
            let stored = std::str::from_utf8(self.block(what)?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
            let rank = self.u32(what)? as usize;
            let dims = (0..rank)
                .map(|_| self.u32(what).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if stored != name || dims != *shape {
                return Err(CheckpointError::Malformed(format!(
                    "{what}: expected {name} {shape:?}, found {stored} {dims:?}"
                )));
            }
            let n: usize = dims.iter().product();
            let raw = self.take(n * 4, what)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor {
                name: name.clone(),
                shape: dims,
                data,
            });
        }
        Ok(Parameters::new(tensors))
    }
}

/// Writes atomically: the file appears complete or not at all.
pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint and verifies it was trained against `expected_vocab_hash`.
pub fn load_checkpoint(path: &Path, expected_vocab_hash: &str) -> Result<ModelCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = ModelCheckpoint::from_bytes(&bytes)?;
    if ckpt.vocab_hash != expected_vocab_hash {
        return Err(Error::Checkpoint(CheckpointError::VocabularyMismatch {
            stored: ckpt.vocab_hash,
            actual: expected_vocab_hash.to_string(),
        }));
    }
    Ok(ckpt)
}
