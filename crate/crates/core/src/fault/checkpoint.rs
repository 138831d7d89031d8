//! Client checkpoints and their binary encoding.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "FSCK" (4) | version u16 | round u32 | client_id u32
//! | epoch_progress u32 | rng_cursor u64 | param_count u32
//! | param_count × f64 | crc32 of all preceding bytes (u32)
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::ModelParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4 + 8 + 4;

/// Resumable state of one client's local training pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub round: u32,
    pub client_id: u32,
    pub params: ModelParams,
    /// Completed local epochs.
    pub epoch_progress: u32,
    /// Position in the client's training stream.
    pub rng_cursor: u64,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.params.len() + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&self.epoch_progress.to_le_bytes());
        out.extend_from_slice(&self.rng_cursor.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for w in self.params.as_slice() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 {
            return Err(Error::Format(format!("{} bytes is too short for a header", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::Corruption(format!("truncated header ({} bytes)", bytes.len())));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let param_count = u32_at(HEADER_LEN - 4) as usize;
        let expected = param_count
            .checked_mul(8)
            .and_then(|p| p.checked_add(HEADER_LEN + 4))
            .ok_or_else(|| Error::Corruption("parameter count overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Corruption(format!(
                "length {} does not match {} parameters ({} bytes expected)",
                bytes.len(),
                param_count,
                expected
            )));
        }
        let body = &bytes[..expected - 4];
        let stored = u32_at(expected - 4);
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Corruption(format!(
                "checksum mismatch (stored {stored:#010x}, computed {actual:#010x})"
            )));
        }
        let params = body[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Checkpoint {
            round: u32_at(6),
            client_id: u32_at(10),
            epoch_progress: u32_at(14),
            rng_cursor: u64::from_le_bytes(bytes[18..26].try_into().expect("8 bytes")),
            params: ModelParams(params),
        })
    }
}

/// `ckpt_c{client}_r{round}.bin`
pub fn checkpoint_file_name(client_id: u32, round: u32) -> String {
    format!("ckpt_c{client_id}_r{round}.bin")
}

pub fn save_checkpoint(cp: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &cp.encode())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}

/// Reinitialize a failed client from the latest global weights when no
/// checkpoint exists. The client then repeats its local pass from epoch 0.
pub fn recover_without_checkpoint(global_params: &ModelParams) -> ModelParams {
    global_params.clone()
}

/// Where the simulator keeps checkpoints. Both variants go through the
/// binary encoding.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CheckpointStore {
    #[default]
    Memory,
    Directory(PathBuf),
}

/// Handle to a saved checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredCheckpoint {
    Bytes(Vec<u8>),
    File(PathBuf),
}

impl CheckpointStore {
    pub fn save(&self, cp: &Checkpoint) -> Result<StoredCheckpoint> {
        match self {
            CheckpointStore::Memory => Ok(StoredCheckpoint::Bytes(cp.encode())),
            CheckpointStore::Directory(dir) => {
                let path = dir.join(checkpoint_file_name(cp.client_id, cp.round));
                save_checkpoint(cp, &path)?;
                Ok(StoredCheckpoint::File(path))
            }
        }
    }
}

impl StoredCheckpoint {
    pub fn load(&self) -> Result<Checkpoint> {
        match self {
            StoredCheckpoint::Bytes(b) => Checkpoint::decode(b),
            StoredCheckpoint::File(p) => load_checkpoint(p),
        }
    }
}
