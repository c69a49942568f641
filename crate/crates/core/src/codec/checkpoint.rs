//! Model checkpoints: the magic `ENETCKPT`, a `u32` little-endian header
//! length, a JSON header, then every layer's weights, biases and (for batch
//! norm) running mean and variance as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnetConfig, EnetParams};
use crate::error::{Error, Result};
use crate::layers::{BnRunning, LayerKind, LayerParams};
use crate::transform::NormMeta;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ENETCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    layer: LayerKind,
    momentum: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: EnetConfig,
    layers: Vec<LayerEntry>,
    norm: Option<NormMeta>,
    fingerprint: String,
}

/// A model plus the plane normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: EnetParams<f32>,
    pub norm: Option<NormMeta>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let p = &ckpt.params;
    let header = Header {
        format_version: FORMAT_VERSION,
        config: *p.config(),
        layers: p
            .layers()
            .iter()
            .zip(p.layer_names())
            .map(|(l, n)| LayerEntry { name: (*n).into(), layer: l.kind, momentum: l.running.as_ref().map(|r| r.momentum) })
            .collect(),
        norm: ckpt.norm,
        fingerprint: p.fingerprint(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| ck_err(path, e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + 12 + 4 * p.flat_params().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for l in p.layers() {
        let stats = l.running.iter().flat_map(|r| r.mean.iter().chain(&r.var));
        for x in l.weights.iter().chain(&l.biases).chain(stats) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn ck_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(ck_err(path, "not a checkpoint (bad magic)"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| ck_err(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| ck_err(path, format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ck_err(path, format!("unsupported format version {}", header.format_version)));
    }
    let mut floats = bytes[12 + hlen..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    if (bytes.len() - 12 - hlen) % 4 != 0 {
        return Err(ck_err(path, "payload is not a whole number of f32 values"));
    }
    let mut take = |n: usize| -> Result<Vec<f32>> {
        let v: Vec<f32> = floats.by_ref().take(n).collect();
        if v.len() < n {
            return Err(ck_err(path, "payload shorter than the layer manifest"));
        }
        Ok(v)
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for entry in &header.layers {
        let kind = entry.layer;
        let weights = take(kind.weight_len())?;
        let biases = take(kind.bias_len())?;
        let running = match (kind, entry.momentum) {
            (LayerKind::BatchNorm { channels }, Some(momentum)) => {
                Some(BnRunning { mean: take(channels)?, var: take(channels)?, momentum })
            }
            (LayerKind::BatchNorm { .. }, None) => return Err(ck_err(path, format!("{}: missing momentum", entry.name))),
            _ => None,
        };
        layers.push(LayerParams { kind, weights, biases, running });
    }
    if take(1).is_ok() {
        return Err(ck_err(path, "payload longer than the layer manifest"));
    }
    let params = EnetParams::from_layers(header.config, layers).map_err(|e| ck_err(path, e.to_string()))?;
    if params.fingerprint() != header.fingerprint {
        return Err(ck_err(path, "parameter fingerprint mismatch"));
    }
    if let Some(i) = params.flat_params().iter().position(|v| !v.is_finite()) {
        return Err(ck_err(path, format!("non-finite parameter {i}")));
    }
    Ok(Checkpoint { params, norm: header.norm })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = EnetParams::build(EnetConfig { n_cc: 8, n_t: 8, f: 4, gamma: 0.25 }, 3).unwrap();
        let ck = Checkpoint { params, norm: Some(NormMeta { offset: 0.5, scale: 0.1 }) };
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = EnetParams::build(EnetConfig { n_cc: 4, n_t: 4, f: 2, gamma: 0.25 }, 3).unwrap();
        save_checkpoint(&path, &Checkpoint { params, norm: None }).unwrap();
        let good = fs::read(&path).unwrap();

        let mut flipped = good.clone();
        *flipped.last_mut().unwrap() ^= 0x40;
        fs::write(&path, &flipped).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("fingerprint"));

        fs::write(&path, &good[..good.len() - 4]).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("shorter"));

        fs::write(&path, b"NOTACKPTxxxx").unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("magic"));
    }
}
