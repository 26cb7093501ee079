//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 format version, u64 header length, UTF-8 JSON
//! header, then every tensor as row-major little-endian f32 in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{layout, TaggerModel};
use super::{count_parameters, ModelConfig, ModelError, ParameterLedger, Result};
use crate::tags::BioLabel;

const MAGIC: &[u8; 8] = b"DEIDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in elements.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub tags: Vec<String>,
    pub tensors: Vec<TensorEntry>,
    pub ledger: ParameterLedger,
    pub seed: Option<u64>,
}

fn tag_strings() -> Vec<String> {
    BioLabel::all().map(|l| l.to_string()).collect()
}

pub fn checkpoint_bytes(model: &TaggerModel<f32>, seed: Option<u64>) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    for spec in layout(&model.config) {
        let values = model.get(spec.slot);
        tensors.push(TensorEntry {
            name: spec.name,
            shape: spec.shape,
            offset,
        });
        offset += values.len() as u64;
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        config: model.config.clone(),
        tags: tag_strings(),
        tensors,
        ledger: count_parameters(&model.config),
        seed,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn save_checkpoint(path: &Path, model: &TaggerModel<f32>, seed: Option<u64>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&checkpoint_bytes(model, seed))?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(TaggerModel<f32>, CheckpointHeader)> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..header_end]).map_err(|e| bad(format!("header: {e}")))?;
    header.config.validate()?;
    if header.tags != tag_strings() {
        return Err(bad("tag vocabulary differs from this build"));
    }
    let expected = count_parameters(&header.config);
    if header.ledger != expected {
        return Err(bad("parameter ledger does not match the config"));
    }
    let data = &bytes[header_end..];
    if data.len() as u64 != expected.total * 4 {
        return Err(bad(format!(
            "data section holds {} bytes, ledger expects {}",
            data.len(),
            expected.total * 4
        )));
    }
    let mut model = TaggerModel::<f32>::zeros(&header.config);
    let specs = layout(&header.config);
    if specs.len() != header.tensors.len() {
        return Err(bad("tensor list does not match the config"));
    }
    for (spec, entry) in specs.iter().zip(&header.tensors) {
        if spec.name != entry.name || spec.shape != entry.shape {
            return Err(bad(format!("unexpected tensor {} {:?}", entry.name, entry.shape)));
        }
        let dst = model.get_mut(spec.slot);
        let start = entry.offset as usize * 4;
        let end = start + dst.len() * 4;
        if end > data.len() {
            return Err(bad(format!("tensor {} runs past the data section", entry.name)));
        }
        for (d, chunk) in dst.iter_mut().zip(data[start..end].chunks_exact(4)) {
            *d = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    Ok((model, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(TaggerModel<f32>, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}
