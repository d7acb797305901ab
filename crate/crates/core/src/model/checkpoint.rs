use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::Model;
use super::params::param_shapes;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{decode_tensor, encode_tensor};
use crate::train::InputPipeline;

pub const ARCHIVE_MAGIC: &[u8; 4] = b"LSGC";

/// Everything needed to rebuild the input pipeline and the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub pipeline: InputPipeline,
    pub token_width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    offset: u64,
    length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// Archive layout: magic, u64 LE index length, JSON index, tensor blobs.
/// Offsets in the index count from the first blob byte.
pub fn encode_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if meta.model != model.config {
        return Err(Error::Internal("checkpoint metadata disagrees with the model config".into()));
    }
    let mut blobs = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in model.params.named() {
        let bytes = encode_tensor(t)?;
        tensors.push(TensorEntry { name, offset: blobs.len() as u64, length: bytes.len() as u64 });
        blobs.extend_from_slice(&bytes);
    }
    let index = serde_json::to_vec(&Index { meta: meta.clone(), tensors })?;
    let mut out = Vec::with_capacity(12 + index.len() + blobs.len());
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(&index);
    out.extend_from_slice(&blobs);
    Ok(out)
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(Model<T>, CheckpointMeta)> {
    let fmt = |field, msg: &str| Error::Format { field, msg: msg.to_string() };
    if bytes.len() < 12 || &bytes[..4] != ARCHIVE_MAGIC {
        return Err(fmt("magic", "not a checkpoint archive"));
    }
    let index_len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let blobs = bytes
        .get(12..)
        .filter(|rest| rest.len() >= index_len)
        .ok_or_else(|| fmt("index", "truncated index"))?;
    let (index_bytes, blobs) = blobs.split_at(index_len);
    let index: Index = serde_json::from_slice(index_bytes)?;
    let meta = index.meta;
    meta.model.validate()?;
    let shapes = param_shapes(&meta.model, meta.token_width);
    let expected = shapes.named();
    if expected.len() != index.tensors.len() {
        return Err(fmt("tensors", "parameter count does not match the model config"));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.iter().zip(&index.tensors) {
        if *name != entry.name {
            return Err(Error::Format { field: "tensors", msg: format!("expected {name}, found {}", entry.name) });
        }
        let start = entry.offset as usize;
        let blob = start
            .checked_add(entry.length as usize)
            .and_then(|end| blobs.get(start..end))
            .ok_or_else(|| Error::Format { field: "tensors", msg: format!("{name} lies outside the archive") })?;
        let t = decode_tensor::<T>(blob)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Format {
                field: "tensors",
                msg: format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
            });
        }
        loaded.push(t.with_grad());
    }
    let params = shapes.rebuild(loaded).expect("counts checked");
    Ok((Model { config: meta.model.clone(), params }, meta))
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &Model<T>, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(Model<T>, CheckpointMeta)> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
