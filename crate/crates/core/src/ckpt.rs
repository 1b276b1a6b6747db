//! Checkpoint serialization.
//!
//! A checkpoint is a JSON manifest listing tensor names, shapes, dtype, and
//! byte offsets, plus a sidecar binary file of raw little-endian IEEE-754
//! 64-bit values. Tensors are organized into groups: `raw` (required),
//! `ema`, and the optimizer moments `opt_m`/`opt_v`. The manifest also
//! embeds the network and SDE configuration and the epoch counter so that a
//! checkpoint is self-describing.
//!
//! `save_checkpoint(path)` writes the manifest at `path` and the binary
//! blob at `path` with the extension replaced by `bin`. A checkpoint
//! without an `ema` group loads in degraded mode with a warning; a
//! truncated binary fails with the name of the first unreadable tensor.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{EdgeDiffError, Result};
use crate::scorenet::{ParamStore, ScoreNetConfig};
use crate::sde::VpSdeConfig;

const FORMAT_VERSION: u32 = 1;

/// Optimizer state carried across resumes.
#[derive(Debug, Clone)]
pub struct OptState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub step_count: u64,
}

/// Everything needed to resume or sample from a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ScoreNetConfig,
    pub sde: VpSdeConfig,
    pub epoch: usize,
    pub raw: ParamStore,
    pub ema: Option<ParamStore>,
    pub opt: Option<OptState>,
    /// Free-form caller metadata (e.g. dataset kind and node count),
    /// persisted verbatim in the manifest.
    pub extra: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    count: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    epoch: usize,
    config: ScoreNetConfig,
    sde: VpSdeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    opt_step: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
    groups: BTreeMap<String, Vec<TensorEntry>>,
}

fn bin_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

fn append_group(
    groups: &mut BTreeMap<String, Vec<TensorEntry>>,
    blob: &mut Vec<u8>,
    group: &str,
    store: &ParamStore,
) {
    let mut entries = Vec::new();
    for (name, tensor) in store.iter() {
        let offset = blob.len() as u64;
        for v in tensor.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            dtype: "f64".to_string(),
            offset,
            count: tensor.len() as u64,
        });
    }
    groups.insert(group.to_string(), entries);
}

/// Write `ckpt` as a JSON manifest at `path` plus a `.bin` sidecar.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut groups = BTreeMap::new();
    append_group(&mut groups, &mut blob, "raw", &ckpt.raw);
    if let Some(ema) = &ckpt.ema {
        append_group(&mut groups, &mut blob, "ema", ema);
    }
    if let Some(opt) = &ckpt.opt {
        append_group(&mut groups, &mut blob, "opt_m", &opt.m);
        append_group(&mut groups, &mut blob, "opt_v", &opt.v);
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        epoch: ckpt.epoch,
        config: ckpt.config.clone(),
        sde: ckpt.sde,
        opt_step: ckpt.opt.as_ref().map(|o| o.step_count),
        extra: ckpt.extra.clone(),
        groups,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| EdgeDiffError::Checkpoint(format!("manifest serialization: {e}")))?;
    std::fs::write(path, json)?;
    std::fs::write(bin_path(path), blob)?;
    Ok(())
}

fn read_group(entries: &[TensorEntry], blob: &[u8]) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for e in entries {
        if e.dtype != "f64" {
            return Err(EdgeDiffError::Checkpoint(format!(
                "tensor {}: unsupported dtype {}",
                e.name, e.dtype
            )));
        }
        let expect: usize = e.shape.iter().product();
        if expect as u64 != e.count {
            return Err(EdgeDiffError::Checkpoint(format!(
                "tensor {}: count {} does not match shape {:?}",
                e.name, e.count, e.shape
            )));
        }
        let start = e.offset as usize;
        let end = start + (e.count as usize) * 8;
        if end > blob.len() {
            return Err(EdgeDiffError::Checkpoint(format!(
                "binary truncated at tensor {} (need {} bytes, file has {})",
                e.name,
                end,
                blob.len()
            )));
        }
        let values: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let tensor = ArrayD::from_shape_vec(IxDyn(&e.shape), values)
            .map_err(|err| EdgeDiffError::Checkpoint(format!("tensor {}: {err}", e.name)))?;
        if !tensor.iter().all(|v| v.is_finite()) {
            return Err(EdgeDiffError::Checkpoint(format!(
                "tensor {} contains non-finite values",
                e.name
            )));
        }
        store.insert(e.name.clone(), tensor);
    }
    Ok(store)
}

/// Load a checkpoint; returns it plus any degraded-mode warnings.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Vec<String>)> {
    let json = std::fs::read_to_string(path)?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| EdgeDiffError::Checkpoint(format!("corrupt manifest: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(EdgeDiffError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let blob = std::fs::read(bin_path(path))?;
    let mut warnings = Vec::new();

    let raw = match manifest.groups.get("raw") {
        Some(entries) => read_group(entries, &blob)?,
        None => {
            return Err(EdgeDiffError::Checkpoint(
                "manifest has no raw parameter group".into(),
            ))
        }
    };
    let ema = match manifest.groups.get("ema") {
        Some(entries) => Some(read_group(entries, &blob)?),
        None => {
            warnings.push(
                "checkpoint has no EMA group; sampling will use raw parameters".to_string(),
            );
            None
        }
    };
    let opt = match (manifest.groups.get("opt_m"), manifest.groups.get("opt_v")) {
        (Some(m), Some(v)) => Some(OptState {
            m: read_group(m, &blob)?,
            v: read_group(v, &blob)?,
            step_count: manifest.opt_step.unwrap_or(0),
        }),
        _ => None,
    };
    Ok((
        Checkpoint {
            config: manifest.config,
            sde: manifest.sde,
            epoch: manifest.epoch,
            raw,
            ema,
            opt,
            extra: manifest.extra,
        },
        warnings,
    ))
}

// ---------------------------------------------------------------------------
