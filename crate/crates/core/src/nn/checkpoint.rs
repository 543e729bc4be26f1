//! Checkpoint files.
//!
//! ```text
//! offset 0       8 bytes   magic "DRNCKPT1"
//! offset 8       8 bytes   header length N, u64 little-endian
//! offset 16      N bytes   UTF-8 JSON header (CheckpointHeader)
//! offset 16 + N  ...       tensor blob: little-endian f32 values
//! ```
//!
//! Tensor offsets in the header are byte offsets from the start of the blob.
//! See `docs/checkpoint_format.md` for the field-by-field description.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{Arch, ArchConfig, ParamSet};
use crate::nn::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DRNCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch_id: String,
    pub config: ArchConfig,
    pub init_seed: u64,
    pub train_seed: Option<u64>,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes a parameter set to checkpoint bytes.
pub fn to_bytes(params: &ParamSet, train_seed: Option<u64>) -> Result<Vec<u8>> {
    let mut blob = Vec::with_capacity(params.num_scalars() * 4);
    let mut tensors = Vec::with_capacity(params.len());
    for (name, t) in params.iter() {
        let offset = blob.len();
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset,
            length: blob.len() - offset,
        });
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        arch_id: params.arch_id().into(),
        config: params.config().clone(),
        init_seed: params.init_seed(),
        train_seed,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ParamSet, CheckpointHeader)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {}", header.format_version)));
    }
    let blob = &bytes[header_end..];
    let arch = Arch::parse(&header.arch_id)?;
    let mut names = Vec::with_capacity(header.tensors.len());
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(bad(&format!("unsupported dtype `{}`", e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        if e.length != n * 4 || e.offset + e.length > blob.len() {
            return Err(bad(&format!("tensor `{}` out of bounds", e.name)));
        }
        let data = blob[e.offset..e.offset + e.length]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        names.push(e.name.clone());
        tensors.push(Tensor::new(e.shape.clone(), data)?);
    }
    let params = ParamSet::from_parts(arch, header.config.clone(), header.init_seed, names, tensors)?;
    Ok((params, header))
}

pub fn save(path: impl AsRef<Path>, params: &ParamSet, train_seed: Option<u64>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(params, train_seed)?;
    crate::fsutil::write_file(path, &bytes)
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(from_bytes(&bytes)?.0)
}
