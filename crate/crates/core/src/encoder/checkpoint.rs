//! Named-tensor checkpoints.
//!
//! Layout: an 8-byte little-endian header length, a JSON header mapping
//! each tensor name to `{dtype, shape, offset}` (plus a `__metadata__`
//! entry holding the config), then the raw little-endian f32 payloads
//! concatenated in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayViewMutD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::config::EncoderConfig;
use super::params::EncoderParams;
use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Serializes `params` and `config` into the checkpoint byte layout.
pub fn to_bytes(params: &EncoderParams, config: &EncoderConfig) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let mut header = Map::new();
    header.insert(METADATA_KEY.into(), serde_json::to_value(config)?);
    let mut payload = Vec::with_capacity(params.num_parameters() * 4);
    for (name, t) in params.tensors() {
        let entry = TensorEntry {
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
        };
        header.insert(name, serde_json::to_value(entry)?);
        for &v in t.iter() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Value::Object(header))?;
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(EncoderParams, EncoderConfig)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| bad("file shorter than the header length"))?
        .try_into()
        .expect("8 bytes");
    let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| bad("header length overflows"))?;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("header runs past the end of the file"))?;
    let header: Map<String, Value> = serde_json::from_slice(&bytes[8..header_end])?;
    let payload = &bytes[header_end..];

    let config: EncoderConfig = serde_json::from_value(
        header
            .get(METADATA_KEY)
            .cloned()
            .ok_or_else(|| bad("missing __metadata__"))?,
    )?;
    let mut params = EncoderParams::init(&EncoderConfig { seed: 0, ..config })?;
    let expected = params.names();
    let names: Vec<&String> = header.keys().filter(|k| *k != METADATA_KEY).collect();
    if names.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            expected.len(),
            names.len()
        )));
    }
    for (name, mut dst) in params.tensors_mut() {
        let entry: TensorEntry = serde_json::from_value(
            header
                .get(&name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?,
        )?;
        read_tensor(&name, &entry, payload, &mut dst)?;
    }
    Ok((params, config))
}

fn read_tensor(
    name: &str,
    entry: &TensorEntry,
    payload: &[u8],
    dst: &mut ArrayViewMutD<'_, f64>,
) -> Result<()> {
    if entry.dtype != "f32" {
        return Err(Error::Checkpoint(format!(
            "{name}: unsupported dtype {}",
            entry.dtype
        )));
    }
    if dst.raw_dim() != IxDyn(&entry.shape) {
        return Err(Error::Checkpoint(format!(
            "{name}: shape {:?} does not match config {:?}",
            entry.shape,
            dst.shape()
        )));
    }
    let end = entry.offset + dst.len() * 4;
    let bytes = payload
        .get(entry.offset..end)
        .ok_or_else(|| Error::Checkpoint(format!("{name}: payload out of bounds")))?;
    for (d, chunk) in dst.iter_mut().zip(bytes.chunks_exact(4)) {
        *d = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
    }
    Ok(())
}

/// Writes the checkpoint through a temporary file and renames it into place.
pub fn save(path: &Path, params: &EncoderParams, config: &EncoderConfig) -> Result<()> {
    let bytes = to_bytes(params, config)?;
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(EncoderParams, EncoderConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            hidden_dim: 8,
            ffn_dim: 12,
            max_seq_len: 10,
            vocab_size: 20,
            seed: 11,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let config = tiny();
        let params = EncoderParams::init(&config).unwrap();
        let bytes = to_bytes(&params, &config).unwrap();
        let (loaded, cfg) = from_bytes(&bytes).unwrap();
        assert_eq!(cfg, config);
        assert_eq!(loaded, params);
        let ids = [2, 9, 7, 3];
        let a = encode(&ids, &[0; 4], &params, &config).unwrap();
        let b = encode(&ids, &[0; 4], &loaded, &cfg).unwrap();
        assert_eq!(a.hidden_states, b.hidden_states);
        assert_eq!(a.attention, b.attention);
    }

    #[test]
    fn header_lists_tensors_in_order() {
        let config = tiny();
        let params = EncoderParams::init(&config).unwrap();
        let bytes = to_bytes(&params, &config).unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header: Map<String, Value> = serde_json::from_slice(&bytes[8..8 + n]).unwrap();
        let keys: Vec<&String> = header.keys().collect();
        assert_eq!(keys[0], METADATA_KEY);
        assert_eq!(keys[1], "embeddings.token");
        assert_eq!(header["embeddings.token"]["offset"], 0);
        assert_eq!(header["embeddings.position"]["offset"], 20 * 8 * 4);
        assert_eq!(bytes.len(), 8 + n + params.num_parameters() * 4);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let config = tiny();
        let params = EncoderParams::init(&config).unwrap();
        let bytes = to_bytes(&params, &config).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(from_bytes(&bytes[..4]).is_err());
    }
}
