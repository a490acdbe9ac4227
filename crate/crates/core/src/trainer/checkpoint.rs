//! Single-file checkpoint container.
//!
//! ```text
//! "CTEFMCK1" | u64 LE header length | JSON header | f32 LE tensor payloads
//! ```
//!
//! The header carries the format version, iteration counter, configuration snapshot and
//! a table of `(name, shape, offset)` entries into the payload. Tensors are grouped as
//! `param/…`, `adam_m/…` and `adam_v/…`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig, TrainState};
use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTEFMCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    iteration: u64,
    adam_step: u64,
    model: ModelConfig,
    train: TrainConfig,
    payload_bytes: usize,
    tensors: Vec<TensorEntry>,
}

fn groups(state: &TrainState) -> [(&'static str, &ParamStore); 3] {
    [("param/", &state.model.params), ("adam_m/", &state.opt.m), ("adam_v/", &state.opt.v)]
}

pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (prefix, store) in groups(state) {
        for (name, t) in store.iter() {
            tensors.push(TensorEntry { name: format!("{prefix}{name}"), shape: [t.nrows(), t.ncols()], offset: payload.len() });
            for &v in t.iter() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        iteration: state.iteration,
        adam_step: state.opt.step,
        model: state.model.cfg.clone(),
        train: state.config.clone(),
        payload_bytes: payload.len(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 16 {
        return Err(corrupt(format!("{} bytes is shorter than the fixed preamble", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(corrupt("truncated header"));
    }
    let raw: serde_json::Value =
        serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(format!("header: {e}")))?;
    let version = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("header has no version"))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::CheckpointVersion { found: version as u32, expected: CHECKPOINT_VERSION });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| corrupt(format!("header: {e}")))?;
    let payload = &body[header_len..];
    if payload.len() != header.payload_bytes {
        return Err(corrupt(format!("payload is {} bytes, header declares {}", payload.len(), header.payload_bytes)));
    }

    let mut stores = [ParamStore::new(), ParamStore::new(), ParamStore::new()];
    for entry in &header.tensors {
        let [r, c] = entry.shape;
        let end = entry.offset.checked_add(r * c * 4).filter(|&e| e <= payload.len());
        let Some(end) = end else {
            return Err(corrupt(format!("tensor {} runs past the payload", entry.name)));
        };
        let values: Vec<f64> = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        let t = Tensor::from_shape_vec((r, c), values).map_err(|e| corrupt(e.to_string()))?;
        let (slot, name) = if let Some(n) = entry.name.strip_prefix("param/") {
            (0, n)
        } else if let Some(n) = entry.name.strip_prefix("adam_m/") {
            (1, n)
        } else if let Some(n) = entry.name.strip_prefix("adam_v/") {
            (2, n)
        } else {
            return Err(corrupt(format!("unknown tensor group in {}", entry.name)));
        };
        stores[slot].insert(name, t);
    }
    let [params, m, v] = stores;
    let model = Model::from_parts(header.model, params).map_err(|e| corrupt(e.to_string()))?;
    for (what, s) in [("first", &m), ("second", &v)] {
        if s.len() != model.params.len() {
            return Err(corrupt(format!("{what} moments cover {} of {} tensors", s.len(), model.params.len())));
        }
    }
    header.train.validate()?;
    Ok(TrainState {
        model,
        opt: AdamState { m, v, step: header.adam_step },
        iteration: header.iteration,
        config: header.train,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(state)?;
    // write-then-rename so a crash never leaves a half-written checkpoint behind
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::ModelPreset;

    fn state() -> TrainState {
        let mut cfg = ModelPreset::Small.build(6, &[4, 5]);
        cfg.cte.model_dim = 8;
        cfg.cte.ffn_dim = 8;
        cfg.unet.cond_dim = 8;
        cfg.unet.channels = [4, 6];
        let model = Model::new(cfg, 3).unwrap();
        let mut st = TrainState::new(model, TrainConfig::default());
        st.iteration = 17;
        st.opt.step = 17;
        for (_, t) in st.opt.m.iter_mut() {
            t.fill(0.125);
        }
        st
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let st = state();
        let bytes = encode_checkpoint(&st).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.model, st.model);
        assert_eq!(back.opt, st.opt);
        assert_eq!(back.iteration, 17);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_magic_are_detected() {
        let bytes = encode_checkpoint(&state()).unwrap();
        for cut in [0, 10, 40, bytes.len() - 1] {
            let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("corrupt-checkpoint"), "{err}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("corrupt-checkpoint"));
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let bytes = encode_checkpoint(&state()).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + len]).unwrap().replacen("\"version\":1", "\"version\":7", 1);
        let mut patched = bytes[..8].to_vec();
        patched.extend_from_slice(&(header.len() as u64).to_le_bytes());
        patched.extend_from_slice(header.as_bytes());
        patched.extend_from_slice(&bytes[16 + len..]);
        let msg = decode_checkpoint(&patched).unwrap_err().to_string();
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
        assert!(matches!(decode_checkpoint(&patched), Err(Error::CheckpointVersion { found: 7, expected: 1 })));
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let st = state();
        save_checkpoint(&path, &st).unwrap();
        let back = load_checkpoint(&path).unwrap();
        save_checkpoint(dir.path().join("ck2.bin"), &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("ck2.bin")).unwrap());
    }
}
