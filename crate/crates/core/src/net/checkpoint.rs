//! Binary checkpoint format.
//!
//! Layout: magic `SMBA`, u32 version, length-prefixed UTF-8 JSON block
//! (model config + training metadata), u32 tensor count, then named tensors
//! as (u32 name length, name, u32 rank, u32 dims..., little-endian float-32
//! payload), and a trailing CRC-32 (IEEE) of all preceding bytes. All
//! integers are little-endian u32. Round-trips are parameter-bit-exact.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, SimbaModel, SimbaParams};

pub const MAGIC: &[u8; 4] = b"SMBA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checkpoint version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint corrupt: {0}")]
    CorruptChecksum(String),
    #[error("checkpoint malformed: {0}")]
    Malformed(String),
}

/// Training metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    /// Epoch (1-based) the stored parameters come from; 0 means initialization.
    pub epoch: usize,
    pub best_val_mad: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetaBlock {
    config: ModelConfig,
    train: TrainMeta,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: TrainMeta,
    pub params: SimbaParams<f32>,
}

impl Checkpoint {
    pub fn new(model: &SimbaModel<f32>, meta: TrainMeta) -> Self {
        Checkpoint {
            config: model.config.clone(),
            meta,
            params: model.params.clone(),
        }
    }

    pub fn into_model(self) -> Result<SimbaModel<f32>, super::ModelError> {
        SimbaModel::from_parts(self.config, self.params)
    }
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    let mut crc = !0u32;
    for &b in bytes {
        crc = table[((crc ^ u32::from(b)) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, FORMAT_VERSION);

    let meta = MetaBlock {
        config: checkpoint.config.clone(),
        train: checkpoint.meta.clone(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    push_u32(&mut buf, json.len() as u32);
    buf.extend_from_slice(&json);

    let mut tensor_count = 0u32;
    checkpoint.params.for_each(|_, _, _| tensor_count += 1);
    push_u32(&mut buf, tensor_count);
    checkpoint.params.for_each(|name, dims, data| {
        push_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        push_u32(&mut buf, dims.len() as u32);
        for &d in dims {
            push_u32(&mut buf, d as u32);
        }
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });

    let crc = crc32(&buf);
    push_u32(&mut buf, crc);
    fs::write(path, &buf).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Malformed("unexpected end of data".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::CorruptChecksum("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let actual_crc = crc32(body);
    if stored_crc != actual_crc {
        return Err(CheckpointError::CorruptChecksum(format!(
            "crc mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }

    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::Malformed("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let json_len = r.u32()? as usize;
    let json = r.take(json_len)?;
    let meta: MetaBlock =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    meta.config
        .validate()
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;

    let tensor_count = r.u32()? as usize;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::new();
    for _ in 0..tensor_count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name, (dims, data));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes after tensors".into()));
    }

    let mut params = SimbaParams::<f32>::zeros(&meta.config);
    let mut missing = None;
    params.for_each_mut(|name, slice| {
        match tensors.get(name) {
            Some((_, data)) if data.len() == slice.len() => slice.copy_from_slice(data),
            Some((_, data)) => {
                missing.get_or_insert(format!(
                    "tensor {name}: expected {} values, found {}",
                    slice.len(),
                    data.len()
                ));
            }
            None => {
                missing.get_or_insert(format!("tensor {name} missing"));
            }
        }
    });
    if let Some(detail) = missing {
        return Err(CheckpointError::Malformed(detail));
    }

    Ok(Checkpoint {
        config: meta.config,
        meta: meta.train,
        params,
    })
}
