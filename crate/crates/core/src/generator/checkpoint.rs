//! Versioned binary checkpoints: `TCKP` magic, a little-endian `u32` version,
//! a `u64` header length, a JSON header, then the flat `f64` payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Arch, VelocityNet};
use crate::chain_model::sha256_hex;
use crate::error::{Error, Result};
use crate::lora::{AdaptedParams, LoraLayer};

const MAGIC: &[u8; 4] = b"TCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Base,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterEntry {
    pub name: String,
    pub rank: usize,
    pub alpha: f64,
    pub out_dim: usize,
    pub in_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub arch: Arch,
    pub values: usize,
    pub payload_sha256: String,
    /// Hash of the base parameters an adapter checkpoint was trained against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adapters: Vec<AdapterEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

fn payload_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_file(path: &Path, mut header: CheckpointHeader, values: &[f64]) -> Result<()> {
    let payload = payload_bytes(values);
    header.values = values.len();
    header.payload_sha256 = sha256_hex(&payload);
    let head = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + head.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&payload);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads and verifies a checkpoint file.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ckpt_err(path, format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(ckpt_err(path, "truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen])?;
    let payload = &body[hlen..];
    if payload.len() != header.values * 8 {
        return Err(ckpt_err(
            path,
            format!(
                "payload has {} bytes, header promises {} values",
                payload.len(),
                header.values
            ),
        ));
    }
    if sha256_hex(payload) != header.payload_sha256 {
        return Err(ckpt_err(path, "payload hash mismatch"));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, values))
}

pub fn save_base(net: &VelocityNet, path: &Path, meta: BTreeMap<String, String>) -> Result<()> {
    let header = CheckpointHeader {
        kind: CheckpointKind::Base,
        arch: net.arch.clone(),
        values: 0,
        payload_sha256: String::new(),
        base_hash: None,
        adapters: Vec::new(),
        meta,
    };
    write_file(path, header, &net.flat_params())
}

pub fn load_base(path: &Path) -> Result<VelocityNet> {
    let (header, values) = read_checkpoint(path)?;
    if header.kind != CheckpointKind::Base {
        return Err(ckpt_err(path, "expected a base checkpoint"));
    }
    let mut net = VelocityNet::init(header.arch, 0)?;
    net.set_flat_params(&values)
        .map_err(|e| ckpt_err(path, format!("parameter count does not match the architecture ({e})")))?;
    Ok(net)
}

/// Adapter tensors only; the header pins the base they belong to.
pub fn save_adapters(params: &AdaptedParams, path: &Path) -> Result<()> {
    let adapters = params
        .ordered()
        .map(|l| AdapterEntry {
            name: l.base_ref.clone(),
            rank: l.rank,
            alpha: l.alpha,
            out_dim: l.out_dim,
            in_dim: l.in_dim,
        })
        .collect();
    let header = CheckpointHeader {
        kind: CheckpointKind::Adapter,
        arch: params.base.arch.clone(),
        values: 0,
        payload_sha256: String::new(),
        base_hash: Some(params.base.param_hash()),
        adapters,
        meta: BTreeMap::new(),
    };
    write_file(path, header, &params.flat_adapter_params())
}

/// Attaches a saved adapter set to `base`, refusing a base it was not trained on.
pub fn load_adapters(path: &Path, base: VelocityNet) -> Result<AdaptedParams> {
    let (header, values) = read_checkpoint(path)?;
    if header.kind != CheckpointKind::Adapter {
        return Err(ckpt_err(path, "expected an adapter checkpoint"));
    }
    if header.arch != base.arch {
        return Err(ckpt_err(path, "adapter was trained for a different architecture"));
    }
    if header.base_hash.as_deref() != Some(base.param_hash().as_str()) {
        return Err(ckpt_err(
            path,
            "adapter was trained against a different base checkpoint",
        ));
    }
    let mut adapters = BTreeMap::new();
    for e in &header.adapters {
        let lin = base
            .layer(&e.name)
            .ok_or_else(|| ckpt_err(path, format!("unknown layer {}", e.name)))?;
        if (lin.out_dim, lin.in_dim) != (e.out_dim, e.in_dim) {
            return Err(ckpt_err(path, format!("shape mismatch for layer {}", e.name)));
        }
        adapters.insert(
            e.name.clone(),
            LoraLayer {
                rank: e.rank,
                alpha: e.alpha,
                out_dim: e.out_dim,
                in_dim: e.in_dim,
                a: vec![0.0; e.rank * e.in_dim],
                b: vec![0.0; e.out_dim * e.rank],
                base_ref: e.name.clone(),
            },
        );
    }
    let mut params = AdaptedParams { base, adapters };
    params.set_flat_adapter_params(&values).map_err(|e| ckpt_err(path, e))?;
    Ok(params)
}

/// Hash of the payload section, for manifests.
pub fn checkpoint_hash(path: &Path) -> Result<String> {
    Ok(read_checkpoint(path)?.0.payload_sha256)
}
