//! `.pxc` checkpoint files: `PXCU`, u32 version, u32 header length, JSON
//! header, then every tensor as little-endian f32 in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ArchSpec, NetworkParameters};
use super::train::{Checkpoint, EpochLoss, TrainingConfig};
use crate::error::{PixcueError, Result};
use crate::forward_model::MaskSpec;
use crate::io::{read_file, write_atomic};

const MAGIC: &[u8; 4] = b"PXCU";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchSpec,
    config: TrainingConfig,
    best_validation_loss: Option<f64>,
    history: Vec<EpochLoss>,
    mask_spec: Option<MaskSpec>,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        arch: c.params.arch.clone(),
        config: c.config.clone(),
        best_validation_loss: c.best_validation_loss.is_finite().then_some(c.best_validation_loss),
        history: c.history.clone(),
        mask_spec: c.mask_spec.clone(),
        tensors: c
            .params
            .tensors()
            .iter()
            .map(|t| TensorEntry { name: t.name.clone(), shape: t.shape.clone(), dtype: "f32".into() })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * c.params.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in c.params.tensors() {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| PixcueError::Format(format!("checkpoint truncated in {what}")))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(PixcueError::Format("not a checkpoint: bad magic bytes".into()));
    }
    let version = u32_at(bytes, 4, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(PixcueError::Format(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32_at(bytes, 8, "header length")? as usize;
    let json = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| PixcueError::Format("checkpoint truncated in header".into()))?;
    let header: Header = serde_json::from_slice(json)
        .map_err(|e| PixcueError::Format(format!("bad checkpoint header: {e}")))?;

    let mut params = NetworkParameters::zeros(&header.arch)?;
    let expected = params.tensors().len();
    if header.tensors.len() != expected {
        return Err(PixcueError::Format(format!(
            "header lists {} tensors, architecture needs {expected}",
            header.tensors.len()
        )));
    }
    let mut at = 12 + header_len;
    for (t, entry) in params.tensors_mut().into_iter().zip(&header.tensors) {
        if t.name != entry.name || t.shape != entry.shape || entry.dtype != "f32" {
            return Err(PixcueError::Format(format!(
                "tensor {} {:?} ({}) does not match expected {} {:?}",
                entry.name, entry.shape, entry.dtype, t.name, t.shape
            )));
        }
        let len = 4 * t.data.len();
        let raw = bytes
            .get(at..at + len)
            .ok_or_else(|| PixcueError::Format(format!("checkpoint truncated: tensor {} is missing data", t.name)))?;
        for (v, b) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64;
        }
        at += len;
    }
    if at != bytes.len() {
        return Err(PixcueError::Format(format!("{} trailing bytes after tensors", bytes.len() - at)));
    }
    Ok(Checkpoint {
        params,
        config: header.config,
        best_validation_loss: header.best_validation_loss.unwrap_or(f64::INFINITY),
        history: header.history,
        mask_spec: header.mask_spec,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &write_checkpoint(c)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;

    fn sample_checkpoint() -> Checkpoint {
        let arch = ArchSpec { iterations: 2, hidden_channels: 3, n_bits: 3, head_hidden: 4, logit_scale: 2.0, prior_width: 0.0 };
        let config = TrainingConfig { arch: arch.clone(), epochs: 2, ..TrainingConfig::default() };
        Checkpoint {
            params: init_params(&arch, 8).unwrap(),
            config,
            best_validation_loss: 0.5,
            history: vec![
                EpochLoss { epoch: 0, train: 1.0, validation: 0.7 },
                EpochLoss { epoch: 1, train: 0.8, validation: 0.5 },
            ],
            mask_spec: None,
        }
    }

    #[test]
    fn roundtrip_is_bit_identical_at_f32() {
        let c = sample_checkpoint();
        let loaded = read_checkpoint(&write_checkpoint(&c).unwrap()).unwrap();
        for (a, b) in loaded.params.tensors().iter().zip(c.params.tensors()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
        assert_eq!(loaded.history, c.history);
        assert_eq!(loaded.config, c.config);
        // a second pass through the format is exact
        assert_eq!(read_checkpoint(&write_checkpoint(&loaded).unwrap()).unwrap(), loaded);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = write_checkpoint(&sample_checkpoint()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(PixcueError::Format(_))));
    }

    #[test]
    fn truncation_names_the_tensor() {
        let bytes = write_checkpoint(&sample_checkpoint()).unwrap();
        let err = read_checkpoint(&bytes[..bytes.len() - 4]).unwrap_err().to_string();
        assert!(err.contains("head.conv3.bias"), "{err}");
        let err = read_checkpoint(&bytes[..20]).unwrap_err();
        assert!(matches!(err, PixcueError::Format(_)));
    }

    #[test]
    fn untrained_checkpoint_roundtrips_infinite_best() {
        let c = sample_checkpoint();
        let u = Checkpoint::untrained(c.params.clone(), c.config.clone());
        let back = read_checkpoint(&write_checkpoint(&u).unwrap()).unwrap();
        assert!(back.best_validation_loss.is_infinite());
        assert!(back.history.is_empty());
    }
}
