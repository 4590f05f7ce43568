//! Self-describing checkpoint files.
//!
//! Layout (little endian):
//!
//! ```text
//! b"TXDCKPT\0" | u32 format_version | u64 header_len | header (JSON)
//! | f32 tensor data in header order | sha256 of everything before it
//! ```

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_model, Init, Model};
use crate::error::{Error, Result};
use crate::nn::Real;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TXDCKPT\0";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    buffer: bool,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch_id: String,
    num_classes: usize,
    class_names: Vec<String>,
    tensors: Vec<TensorEntry>,
}

pub(crate) fn encode<T: Real>(model: &Model<T>, version: u32) -> Vec<u8> {
    let tensors = model
        .param_names
        .iter()
        .zip(&model.params)
        .map(|(n, a)| (n, a, false))
        .chain(model.buffer_names.iter().zip(&model.buffers).map(|(n, a)| (n, a, true)));
    let mut entries = Vec::new();
    let mut data = Vec::new();
    for (name, arr, buffer) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            buffer,
            shape: arr.shape().to_vec(),
        });
        for v in arr.iter() {
            data.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        arch_id: model.arch_id(),
        num_classes: model.num_classes,
        class_names: model.class_names.clone(),
        tensors: entries,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 12 + header.len() + data.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(model, CHECKPOINT_FORMAT_VERSION)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Integrity(msg) => Error::Integrity(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn decode<T: Real>(bytes: &[u8]) -> Result<Model<T>> {
    let fixed = MAGIC.len() + 4 + 8;
    if bytes.len() < fixed + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checksum mismatch (file is corrupt or truncated)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = fixed
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::Integrity("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&body[fixed..header_end])
        .map_err(|e| Error::Integrity(format!("bad header: {e}")))?;
    let mut model = build_model::<T>(&header.arch_id, header.num_classes, &Init::Random(0))?;
    model.set_class_names(header.class_names)?;
    let mut data = &body[header_end..];
    for entry in header.tensors {
        let (names, store) = if entry.buffer {
            (&model.buffer_names, &mut model.buffers)
        } else {
            (&model.param_names, &mut model.params)
        };
        let i = names
            .iter()
            .position(|n| *n == entry.name)
            .ok_or_else(|| Error::Load(format!("checkpoint tensor {} not in {}", entry.name, header.arch_id)))?;
        if store[i].shape() != entry.shape.as_slice() {
            return Err(Error::Load(format!(
                "{}: checkpoint has {:?}, model expects {:?}",
                entry.name,
                entry.shape,
                store[i].shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        if data.len() < 4 * n {
            return Err(Error::Integrity("tensor data truncated".into()));
        }
        let (chunk, rest) = data.split_at(4 * n);
        data = rest;
        let values = chunk
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        store[i] = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("shape checked");
    }
    if !data.is_empty() {
        return Err(Error::Integrity("trailing tensor data".into()));
    }
    Ok(model)
}
