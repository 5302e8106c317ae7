//! LIFTCKPT binary checkpoints.
//!
//! Layout (little endian): magic `LIFTCKPT`, u32 format version, u64 length of
//! a JSON header `{"config": ..., "metadata": ...}`, the header bytes, u32
//! tensor count, then per tensor: u32 name length, name bytes, u32 rank, u64
//! per dimension, and the f64 values.

use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, Parameters};
use super::tensor::Tensor;
use super::ModelError;

const MAGIC: &[u8; 8] = b"LIFTCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Free-form run metadata (vocabulary, lexicon, encoder settings, ...).
    pub metadata: serde_json::Value,
    pub params: Parameters,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            metadata: self.metadata.clone(),
        })?;
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let tensors = self.params.named();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &dim in &t.shape {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, ModelError> {
        let r = &mut bytes;
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Checkpoint("magic mismatch: not a LIFTCKPT file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = read_u64(r)? as usize;
        if header_len > r.len() {
            return Err(ModelError::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..header_len])?;
        *r = &r[header_len..];
        header.config.check()?;

        let mut params = Parameters::zeros(&header.config);
        let count = read_u32(r)? as usize;
        let mut slots = params.named_mut();
        if count != slots.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint holds {count} tensors, config implies {}",
                slots.len()
            )));
        }
        for (expected_name, slot) in slots.iter_mut() {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| ModelError::Checkpoint("tensor name is not utf-8".into()))?;
            if &name != expected_name {
                return Err(ModelError::Checkpoint(format!(
                    "expected tensor {expected_name}, found {name}"
                )));
            }
            let rank = read_u32(r)? as usize;
            let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if shape != slot.shape {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name} has shape {shape:?}, expected {:?}",
                    slot.shape
                )));
            }
            let mut data = Vec::with_capacity(slot.len());
            for _ in 0..slot.len() {
                data.push(f64::from_le_bytes(read_array(r)?));
            }
            **slot = Tensor { shape, data };
        }
        drop(slots);
        if !r.is_empty() {
            return Err(ModelError::Checkpoint("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint { config: header.config, metadata: header.metadata, params })
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|_| ModelError::Checkpoint("unexpected end of checkpoint".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N], ModelError> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn read_u32(r: &mut &[u8]) -> Result<u32, ModelError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut &[u8]) -> Result<u64, ModelError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

/// Writes to a sibling temp file and renames it over `path`, so an
/// interrupted write never leaves a partial checkpoint behind.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let bytes = ckpt.to_bytes()?;
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ModelError::Checkpoint(format!("{} not found", path.display())),
        _ => ModelError::Io(e),
    })?;
    Checkpoint::from_bytes(&bytes)
}
