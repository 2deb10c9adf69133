//! Versioned checkpoint container.
//!
//! Layout: the 8-byte magic `MUGCKPT\0`, a little-endian `u64` header length,
//! a JSON header, then every tensor's values as little-endian `f64` in the
//! order the header lists them.

use std::fs;
use std::path::Path;

use mug_diffcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::MugConfig;
use crate::encoders::EncoderRegistry;
use crate::eval::ProbeParams;
use crate::model::MugModel;
use crate::{MugError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MUGCKPT\0";
const FORMAT: &str = "mug-checkpoint";
const PROBE_WEIGHTS: &str = "probe.weights";
const PROBE_BIAS: &str = "probe.bias";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: MugConfig,
    input_dims: usize,
    step: u64,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

/// A model with its training position and optional classification probe.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: MugModel,
    pub step: u64,
    pub seed: u64,
    pub probe: Option<ProbeParams>,
}

pub fn encode_checkpoint(model: &MugModel, step: u64, seed: u64, probe: Option<&ProbeParams>) -> Result<Vec<u8>> {
    let mut tensors: Vec<(String, &Tensor)> = model.parameters();
    if let Some(p) = probe {
        tensors.push((PROBE_WEIGHTS.into(), &p.weights));
        tensors.push((PROBE_BIAS.into(), &p.bias));
    }
    let header = Header {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        input_dims: model.input_dims(),
        step,
        seed,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let body: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(16 + json.len() + body);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], registry: &EncoderRegistry) -> Result<Checkpoint> {
    let bad = |m: &str| MugError::CheckpointFormat(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| bad("truncated header"))?;
    let raw: serde_json::Value = serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("header has no version"))?;
    if version != CHECKPOINT_VERSION as u64 {
        return Err(MugError::CheckpointVersion {
            found: version as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(&format!("unknown format {:?}", header.format)));
    }

    let mut offset = 16 + len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = offset
            .checked_add(n * 8)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(&format!("truncated data for {}", entry.name)))?;
        let data = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes after the last tensor"));
    }

    let probe = match tensors.iter().position(|(n, _)| n == PROBE_WEIGHTS) {
        Some(k) => {
            let rest = tensors.split_off(k);
            let [(_, weights), (bn, bias)] = <[_; 2]>::try_from(rest).map_err(|_| bad("malformed probe block"))?;
            if bn != PROBE_BIAS {
                return Err(bad("probe weights without bias"));
            }
            Some(ProbeParams::new(weights, bias)?)
        }
        None => None,
    };
    let mut model = MugModel::with_registry(header.config, header.input_dims, registry)?;
    model.load_parameters(tensors)?;
    Ok(Checkpoint {
        model,
        step: header.step,
        seed: header.seed,
        probe,
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &MugModel,
    step: u64,
    seed: u64,
    probe: Option<&ProbeParams>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, step, seed, probe)?;
    fs::write(path, bytes).map_err(|e| MugError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    load_checkpoint_with(path, &EncoderRegistry::builtin())
}

pub fn load_checkpoint_with(path: impl AsRef<Path>, registry: &EncoderRegistry) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MugError::io(path, e))?;
    decode_checkpoint(&bytes, registry)
}
