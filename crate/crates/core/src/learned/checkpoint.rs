//! Checkpoint file: `PRSANSCK`, `u32` version, `u32` header length, JSON
//! header, then every layer's weights followed by its biases as
//! little-endian `f32`, in layer order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Architecture, DenoiserParams, Provenance};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PRSANSCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    provenance: Provenance,
    sigma_train: f64,
    seed: u64,
}

pub fn encode(params: &DenoiserParams) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        architecture: params.arch.clone(),
        provenance: params.provenance,
        sigma_train: params.sigma_train,
        seed: params.seed,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in params.params() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DenoiserParams> {
    if bytes.len() < 16 {
        return Err(Error::PayloadSize("checkpoint shorter than its header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + len {
        return Err(Error::PayloadSize("checkpoint header truncated".into()));
    }
    let header: Header =
        serde_json::from_slice(&bytes[16..16 + len]).map_err(|e| Error::Metadata(e.to_string()))?;
    if header.architecture.depth == 0 || header.architecture.channels == 0 {
        return Err(Error::Metadata("architecture needs depth and channels ≥ 1".into()));
    }
    let mut params = DenoiserParams::zeros(header.architecture);
    params.provenance = header.provenance;
    params.sigma_train = header.sigma_train;
    params.seed = header.seed;
    let payload = &bytes[16 + len..];
    if payload.len() != 4 * params.n_params() {
        return Err(Error::PayloadSize(format!(
            "expected {} weight bytes, found {}",
            4 * params.n_params(),
            payload.len()
        )));
    }
    for (i, (p, c)) in params.params_mut().zip(payload.chunks_exact(4)).enumerate() {
        let v = f32::from_le_bytes(c.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        *p = v as f64;
    }
    Ok(params)
}

pub fn save(params: &DenoiserParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), encode(params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<DenoiserParams> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
