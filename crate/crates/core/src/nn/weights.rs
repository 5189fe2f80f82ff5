//! Weight persistence: magic + version, JSON header, little-endian f32
//! payload in declaration order, then a 64-bit checksum of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, CompactCnn};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"STEPSCAN";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    architecture: Architecture,
    num_classes: usize,
    class_names: Vec<String>,
}

/// FNV-1a over the payload bytes.
pub fn checksum64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn payload_bytes(model: &CompactCnn) -> Vec<u8> {
    model
        .param_vec()
        .iter()
        .flat_map(|&p| (p as f32).to_le_bytes())
        .collect()
}

/// Checksum of the model's current parameters, as persisted.
pub fn model_checksum(model: &CompactCnn) -> u64 {
    checksum64(&payload_bytes(model))
}

pub fn save_weights(model: &CompactCnn, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = serde_json::to_vec(&WeightsHeader {
        architecture: model.arch.clone(),
        num_classes: model.arch.num_classes,
        class_names: model.class_names.clone(),
    })?;
    let payload = payload_bytes(model);
    let mut out = Vec::with_capacity(16 + header.len() + payload.len() + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum64(&payload).to_le_bytes());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<CompactCnn> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let take = |at: usize, len: usize| -> Result<&[u8]> {
        bytes
            .get(at..at + len)
            .ok_or_else(|| Error::Weights("file truncated".into()))
    };
    if take(0, 8)? != MAGIC {
        return Err(Error::Weights("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(8, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Weights(format!(
            "unsupported format version {version}"
        )));
    }
    let header_len = u32::from_le_bytes(take(12, 4)?.try_into().unwrap()) as usize;
    let header: WeightsHeader = serde_json::from_slice(take(16, header_len)?)
        .map_err(|e| Error::Weights(format!("bad header: {e}")))?;
    header
        .architecture
        .validate()
        .map_err(|e| Error::Weights(format!("bad architecture: {e}")))?;
    if header.num_classes != header.architecture.num_classes
        || header.class_names.len() != header.num_classes
    {
        return Err(Error::Weights(format!(
            "num_classes {} does not match architecture/class names",
            header.num_classes
        )));
    }

    let mut model = CompactCnn::init(header.architecture, header.class_names, 0)?;
    let expected = model.param_vec().len();
    let payload_at = 16 + header_len;
    let payload = take(payload_at, expected * 4)?;
    let stored = u64::from_le_bytes(take(payload_at + expected * 4, 8)?.try_into().unwrap());
    if bytes.len() != payload_at + expected * 4 + 8 {
        return Err(Error::Weights("trailing bytes after checksum".into()));
    }
    if checksum64(payload) != stored {
        return Err(Error::Weights("checksum mismatch".into()));
    }
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    model.set_param_vec(&params);
    Ok(model)
}
