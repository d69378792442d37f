//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "SGADAMCK"
//! version      u32
//! config hash  32 bytes (SHA-256 of the trajectory-affecting config)
//! n_tensors    u32
//!   name_len u32, name utf-8, rank u32, extents u64 * rank, payload f64 * prod(extents)
//! t            u64      optimizer step count
//! epoch        u64      completed epochs
//! global_step  u64
//! h_untrained  f64      mean normalized test entropy before training
//! h_first      f64      same after epoch 1 (NaN until then)
//! n_streams    u32
//!   state u64 * n_streams
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SGADAMCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint was written by a different configuration (hash {found}, expected {expected})")]
    HashMismatch { found: String, expected: String },
    #[error("checkpoint truncated at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub t: u64,
    pub epoch: u64,
    pub global_step: u64,
    pub untrained_entropy: f64,
    pub first_epoch_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub tensors: Vec<(String, Tensor)>,
    pub meta: CheckpointMeta,
    pub rng_states: Vec<u64>,
}

impl Checkpoint {
    /// Tensors whose names start with `prefix.`, in file order.
    pub fn group(&self, prefix: &str) -> Vec<Tensor> {
        self.tensors
            .iter()
            .filter(|(name, _)| name.split_once('.').is_some_and(|(p, _)| p == prefix))
            .map(|(_, t)| t.clone())
            .collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &x in t.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let m = &self.meta;
        for x in [m.t, m.epoch, m.global_step] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&m.untrained_entropy.to_le_bytes());
        out.extend_from_slice(&m.first_epoch_entropy.to_le_bytes());
        out.extend_from_slice(&(self.rng_states.len() as u32).to_le_bytes());
        for s in &self.rng_states {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    /// Decodes and, when `expected_hash` is given, checks the config hash.
    pub fn decode(bytes: &[u8], expected_hash: Option<&[u8; 32]>) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic.to_vec()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if let Some(expected) = expected_hash {
            if &config_hash != expected {
                return Err(CheckpointError::HashMismatch {
                    found: super::config::hex(&config_hash),
                    expected: super::config::hex(expected),
                });
            }
        }
        let n = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name is not utf-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>, _>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} is too large")))?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| CheckpointError::Malformed("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        let meta = CheckpointMeta {
            t: r.u64()?,
            epoch: r.u64()?,
            global_step: r.u64()?,
            untrained_entropy: r.f64()?,
            first_epoch_entropy: r.f64()?,
        };
        let n_streams = r.u32()? as usize;
        let rng_states = (0..n_streams).map(|_| r.u64()).collect::<Result<_, _>>()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config_hash,
            tensors,
            meta,
            rng_states,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes through a temporary file so a crash never leaves a partial checkpoint.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, ck.encode()).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::decode(&bytes, expected_hash)
}
