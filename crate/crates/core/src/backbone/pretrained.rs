//! Backbone weights from safetensors files (torchvision parameter names).

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::Model;
use crate::error::{Error, Result};
use crate::nn::Real;

fn is_head(name: &str) -> bool {
    name.starts_with("fc.")
}

fn decode(view: &TensorView<'_>) -> std::result::Result<Vec<f64>, String> {
    let data = view.data();
    match view.dtype() {
        Dtype::F32 => Ok(data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect()),
        Dtype::F64 => Ok(data
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect()),
        other => Err(format!("unsupported dtype {other:?} (F32 or F64 expected)")),
    }
}

/// Loads every non-head parameter and buffer of `model` from `path`. Extra
/// tensors in the file (the old head, `num_batches_tracked`) are ignored.
pub(super) fn load_backbone_weights<T: Real>(model: &mut Model<T>, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Load(format!("{}: not a safetensors file: {e}", path.display())))?;
    let mut problems = Vec::new();
    let mut loaded: Vec<(bool, usize, ArrayD<T>)> = Vec::new();
    let targets = model
        .param_names
        .iter()
        .zip(&model.params)
        .enumerate()
        .map(|(i, (n, p))| (true, i, n, p.shape().to_vec()))
        .chain(
            model
                .buffer_names
                .iter()
                .zip(&model.buffers)
                .enumerate()
                .map(|(i, (n, b))| (false, i, n, b.shape().to_vec())),
        );
    for (is_param, i, name, shape) in targets {
        if is_head(name) {
            continue;
        }
        let view = match st.tensor(name) {
            Ok(v) => v,
            Err(_) => {
                problems.push(format!("{name}: missing (model expects {shape:?})"));
                continue;
            }
        };
        if view.shape() != shape.as_slice() {
            problems.push(format!(
                "{name}: file has {:?}, model expects {shape:?}",
                view.shape()
            ));
            continue;
        }
        match decode(&view) {
            Ok(values) => {
                let arr = ArrayD::from_shape_vec(IxDyn(&shape), values.into_iter().map(T::lit).collect())
                    .expect("shape checked");
                loaded.push((is_param, i, arr));
            }
            Err(msg) => problems.push(format!("{name}: {msg}")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(format!(
            "{} does not match {} ({} problems): {}",
            path.display(),
            model.arch_id(),
            problems.len(),
            problems.join("; ")
        )));
    }
    for (is_param, i, arr) in loaded {
        if is_param {
            model.params[i] = arr;
        } else {
            model.buffers[i] = arr;
        }
    }
    Ok(())
}

/// Writes all parameters and buffers as `F32` safetensors, the format
/// [`super::Init::Pretrained`] reads.
pub fn save_weights_safetensors<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let encoded: Vec<(String, Vec<usize>, Vec<u8>)> = model
        .param_names
        .iter()
        .zip(&model.params)
        .chain(model.buffer_names.iter().zip(&model.buffers))
        .map(|(n, a)| {
            let bytes = a
                .iter()
                .flat_map(|v| (v.to_f64_lossy() as f32).to_le_bytes())
                .collect();
            (n.clone(), a.shape().to_vec(), bytes)
        })
        .collect();
    let views = encoded
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Load(format!("{n}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = safetensors::serialize(views, None)
        .map_err(|e| Error::Load(format!("serialize: {e}")))?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
