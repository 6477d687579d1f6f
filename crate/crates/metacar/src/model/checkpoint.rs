//! Weight checkpoints: a raw little-endian f64 blob plus a JSON sidecar
//! carrying shapes and standardization constants.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelWeights, OMEGA_SCALE, VX_SCALE, VY_SCALE};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    config: ModelConfig,
    n_params: usize,
    vx_scale: f64,
    vy_scale: f64,
    omega_scale: f64,
}

fn sidecar_path(bin_path: &Path) -> std::path::PathBuf {
    bin_path.with_extension("json")
}

pub fn save_checkpoint(weights: &ModelWeights, bin_path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(weights.data.len() * 8);
    for v in &weights.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(bin_path, bytes)?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        config: weights.cfg,
        n_params: weights.data.len(),
        vx_scale: VX_SCALE,
        vy_scale: VY_SCALE,
        omega_scale: OMEGA_SCALE,
    };
    fs::write(
        sidecar_path(bin_path),
        serde_json::to_vec_pretty(&sidecar)?,
    )?;
    Ok(())
}

pub fn load_checkpoint(bin_path: &Path) -> Result<ModelWeights> {
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(bin_path))?)?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported format version {}",
            sidecar.format_version
        )));
    }
    let bytes = fs::read(bin_path)?;
    if bytes.len() != sidecar.n_params * 8 {
        return Err(Error::CheckpointFormat(format!(
            "blob holds {} bytes, sidecar says {} params",
            bytes.len(),
            sidecar.n_params
        )));
    }
    let expected = sidecar.config.layout().total();
    if sidecar.n_params != expected {
        return Err(Error::CheckpointFormat(format!(
            "sidecar param count {} does not match config ({expected})",
            sidecar.n_params
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ModelWeights {
        cfg: sidecar.config,
        data,
    })
}
