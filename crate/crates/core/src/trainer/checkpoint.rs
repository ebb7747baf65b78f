//! Versioned checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "DERMCKPT" | version u32 | header_len u64 | header (JSON)
//! | tensor data (f64) | SHA-256 of all preceding bytes
//! ```
//!
//! The header carries the run fingerprint, model specs, optimizer settings,
//! progress counters, loss history and an index into the tensor data.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainState;
use crate::error::{Error, Result};
use crate::model::{build_model, BackboneSpec, HeadSpec, ModelAssembly};
use crate::optim::{Optimizer, OptimizerSpec, SlotState};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DERMCKPT";
const PREFIX_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Model,
    OptFirst,
    OptSecond,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    role: Role,
    name: String,
    shape: Vec<usize>,
    /// Offset into the data section, in elements.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config_hash: String,
    pub backbone: BackboneSpec,
    pub head: HeadSpec,
    pub optimizer: OptimizerSpec,
    pub state: TrainState,
    slot_steps: BTreeMap<String, u64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model_state: BTreeMap<String, ArrayD<f64>>,
    pub optimizer_slots: BTreeMap<String, SlotState>,
}

fn corrupt(version: u32, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        version,
        reason: reason.into(),
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &ModelAssembly,
    optimizer: &Optimizer,
    state: &TrainState,
    config_hash: &str,
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    let mut push = |role, name: &str, a: &ArrayD<f64>| {
        tensors.push(TensorEntry {
            role,
            name: name.to_string(),
            shape: a.shape().to_vec(),
            offset: data.len(),
        });
        data.extend(a.iter());
    };
    for (name, a) in model.state_dict() {
        push(Role::Model, &name, &a);
    }
    let mut slot_steps = BTreeMap::new();
    for (name, slot) in optimizer.slots() {
        slot_steps.insert(name.clone(), slot.steps);
        push(Role::OptFirst, name, &slot.first);
        if let Some(second) = &slot.second {
            push(Role::OptSecond, name, second);
        }
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.to_string(),
        backbone: BackboneSpec {
            pretrained_weights: None,
            weights_sha256: None,
            ..model.backbone_spec().clone()
        },
        head: model.head_spec().clone(),
        optimizer: *optimizer.spec(),
        state: state.clone(),
        slot_steps,
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| corrupt(CHECKPOINT_VERSION, e.to_string()))?;

    let mut buf = Vec::with_capacity(PREFIX_LEN + json.len() + data.len() * 8 + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in &data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    // Write beside the target and rename so a crash never leaves a torn file.
    let tmp = path.with_extension("ckpt.partial");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < PREFIX_LEN + DIGEST_LEN || &bytes[..8] != MAGIC {
        if bytes.len() >= 8 && &bytes[..8] != MAGIC {
            return Err(corrupt(0, "not a checkpoint file (bad magic)"));
        }
        return Err(corrupt(0, format!("truncated file ({} bytes)", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(
            version,
            format!("unsupported format version; this build reads version {CHECKPOINT_VERSION}"),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt(version, "checksum mismatch (file truncated or corrupted)"));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&end| end <= body.len())
        .ok_or_else(|| corrupt(version, "header length exceeds file size"))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[PREFIX_LEN..data_start])
        .map_err(|e| corrupt(version, format!("malformed header: {e}")))?;
    let data = &body[data_start..];
    if data.len() % 8 != 0 {
        return Err(corrupt(version, "tensor section is not a whole number of f64 values"));
    }
    let n_values = data.len() / 8;

    let mut model_state = BTreeMap::new();
    let mut firsts = BTreeMap::new();
    let mut seconds = BTreeMap::new();
    for t in &header.tensors {
        let len: usize = t.shape.iter().product();
        if t.offset + len > n_values {
            return Err(corrupt(version, format!("tensor `{}` runs past the data section", t.name)));
        }
        let values = data[t.offset * 8..(t.offset + len) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let arr = ArrayD::from_shape_vec(t.shape.clone(), values)
            .map_err(|e| corrupt(version, e.to_string()))?;
        let target = match t.role {
            Role::Model => &mut model_state,
            Role::OptFirst => &mut firsts,
            Role::OptSecond => &mut seconds,
        };
        target.insert(t.name.clone(), arr);
    }
    let mut optimizer_slots = BTreeMap::new();
    for (name, first) in firsts {
        let steps = *header
            .slot_steps
            .get(&name)
            .ok_or_else(|| corrupt(version, format!("optimizer slot `{name}` has no step count")))?;
        let second = seconds.remove(&name);
        optimizer_slots.insert(
            name,
            SlotState {
                steps,
                first,
                second,
            },
        );
    }
    Ok(Checkpoint {
        header,
        model_state,
        optimizer_slots,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

/// Rebuilds the trained model stored in a checkpoint.
pub fn load_model(path: &Path) -> Result<(ModelAssembly, CheckpointHeader)> {
    let ckpt = load_checkpoint(path)?;
    let mut model = build_model(&ckpt.header.backbone, &ckpt.header.head, ckpt.header.state.seed)?;
    model.load_state(&ckpt.model_state, |_| true)?;
    Ok((model, ckpt.header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BackboneSpec;
    use crate::nn::Param;
    use crate::trainer::LossRecord;

    fn fixture() -> (ModelAssembly, Optimizer, TrainState) {
        let head = HeadSpec {
            hidden_widths: vec![8, 8],
            ..HeadSpec::default()
        };
        let model = build_model(&BackboneSpec::toy(), &head, 4).unwrap();
        let mut opt = Optimizer::new(OptimizerSpec::default()).unwrap();
        let mut p = Param::new(ndarray::arr1(&[0.5, -0.25]).into_dyn());
        p.grad.fill(0.1);
        opt.update("head.0.fc.bias", 0.3, &mut p);
        let mut state = TrainState::new(4);
        state.global_step = 2;
        state.loss_history = vec![
            LossRecord {
                step: 0,
                epoch: 0,
                phase: 0,
                loss: 1.0 / 3.0,
            },
            LossRecord {
                step: 1,
                epoch: 0,
                phase: 0,
                loss: std::f64::consts::LN_2,
            },
        ];
        (model, opt, state)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let (model, opt, state) = fixture();
        save_checkpoint(&path, &model, &opt, &state, "abc").unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.header.state, state);
        assert_eq!(ckpt.header.config_hash, "abc");
        assert_eq!(ckpt.optimizer_slots, *opt.slots());
        let (restored, _) = load_model(&path).unwrap();
        assert_eq!(restored.group_checksums(), model.group_checksums());
    }

    #[test]
    fn truncation_and_corruption_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let (model, opt, state) = fixture();
        save_checkpoint(&path, &model, &opt, &state, "abc").unwrap();
        let bytes = std::fs::read(&path).unwrap();

        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = parse_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 0x40;
        let err = parse_checkpoint(&flipped).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        let mut future = bytes.clone();
        future[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = parse_checkpoint(&future).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { version: 7, .. }), "{err}");

        assert!(parse_checkpoint(b"PK\x03\x04 something else entirely, long enough to pass").is_err());
    }
}
