//! Pretrained backbone weights in the safetensors container.
//!
//! Tensor names follow the usual residual-network state-dict layout
//! (`conv1.weight`, `layer3.2.bn2.running_var`, `layer1.0.downsample.0.weight`),
//! so a converted torchvision checkpoint loads directly. Entries the model
//! does not use (the original classifier `fc.*`, `num_batches_tracked`) are
//! ignored.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::ArrayD;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use super::{hex, is_backbone_entry, ModelAssembly};
use crate::error::{Error, Result};

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn decode(view: &TensorView<'_>, name: &str) -> Result<ArrayD<f64>> {
    let data = view.data();
    let values: Vec<f64> = match view.dtype() {
        Dtype::F32 => data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
        Dtype::F64 => data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        other => {
            return Err(Error::Weights(format!(
                "tensor `{name}` has unsupported dtype {other:?}"
            )))
        }
    };
    ArrayD::from_shape_vec(view.shape().to_vec(), values)
        .map_err(|e| Error::Weights(format!("tensor `{name}`: {e}")))
}

pub fn read_safetensors(path: &Path) -> Result<BTreeMap<String, ArrayD<f64>>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Weights(format!("cannot read {}: {e}", path.display())))?;
    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Weights(format!("corrupt weights file {}: {e}", path.display())))?;
    st.tensors()
        .into_iter()
        .map(|(name, view)| decode(&view, &name).map(|a| (name, a)))
        .collect()
}

/// Loads every backbone parameter and batch-norm buffer from `path`.
pub fn load_backbone(model: &mut ModelAssembly, path: &Path, sha256: Option<&str>) -> Result<usize> {
    if let Some(expected) = sha256 {
        let actual = file_sha256(path).map_err(|e| Error::Weights(e.to_string()))?;
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::Weights(format!(
                "{} has sha256 {actual}, expected {expected}",
                path.display()
            )));
        }
    }
    let state = read_safetensors(path)?;
    let n = model.load_state(&state, is_backbone_entry)?;
    log::info!("loaded {n} backbone tensors from {}", path.display());
    Ok(n)
}

/// Writes the selected model tensors as little-endian f32 safetensors.
pub fn save_safetensors<F>(model: &ModelAssembly, path: &Path, filter: F) -> Result<()>
where
    F: Fn(&str) -> bool,
{
    let state = model.state_dict();
    let bytes: BTreeMap<&str, (Vec<usize>, Vec<u8>)> = state
        .iter()
        .filter(|(n, _)| filter(n))
        .map(|(n, a)| {
            let raw = a.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
            (n.as_str(), (a.shape().to_vec(), raw))
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(n, (shape, raw))| {
            TensorView::new(Dtype::F32, shape.clone(), raw)
                .map(|v| (n.to_string(), v))
                .map_err(|e| Error::Weights(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = safetensors::tensor::serialize(views, None::<HashMap<String, String>>)
        .map_err(|e| Error::Weights(e.to_string()))?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
