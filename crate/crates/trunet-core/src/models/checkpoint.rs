//! Checkpoint file format.
//!
//! Layout: magic `TRUNETCKPT1`, little-endian u32 header length, UTF-8 JSON
//! header `{config, names: [{name, shape, offset}], step}`, then one raw
//! little-endian f32 payload blob. `offset` is the byte offset of each
//! record inside the payload. Round-trips are bit-exact.
//!
//! Optimizer moments (or any auxiliary arrays) ride along as extra named
//! records after the model parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build, Model, ModelConfig};
use crate::error::{format_err, Result};

const MAGIC: &[u8] = b"TRUNETCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    names: Vec<Entry>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// A checkpoint read back from disk.
pub struct LoadedCheckpoint {
    pub model: Model<f32>,
    /// Auxiliary arrays (e.g. optimizer moments) in file order.
    pub extras: Vec<(String, Vec<f32>)>,
    pub step: u64,
}

/// Writes the model parameters (declaration order) plus any auxiliary
/// arrays.
pub fn save_checkpoint(
    model: &Model<f32>,
    extras: &[(String, Vec<f32>)],
    step: u64,
    path: &Path,
) -> Result<()> {
    let params = model.named_parameters();
    let mut names = Vec::with_capacity(params.len() + extras.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, values: &[f32]| {
        names.push(Entry {
            name: name.to_string(),
            shape,
            offset: payload.len() as u64,
        });
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, tensor) in &params {
        push(name, tensor.shape().to_vec(), &tensor.data());
    }
    for (name, values) in extras {
        push(name, vec![values.len()], values);
    }
    let header = Header {
        config: model.config().clone(),
        names,
        step,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Rebuilds the model from the stored config and loads every parameter
/// bit-exactly. Fails naming the first offending record.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 11];
    r.read_exact(&mut magic)
        .map_err(|_| format_err!("checkpoint shorter than its magic"))?;
    if magic != MAGIC {
        return Err(format_err!(
            "bad checkpoint magic {:?} (expected {:?})",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        ));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)
        .map_err(|_| format_err!("checkpoint truncated in header length"))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|_| format_err!("checkpoint truncated inside the header"))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| format_err!("checkpoint header is not valid JSON: {e}"))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    // Initialization is immediately overwritten; the seed is irrelevant.
    let model = build::<f32>(&header.config, 0)?;
    let params = model.named_parameters();

    let read_record = |entry: &Entry| -> Result<Vec<f32>> {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 4;
        if end > payload.len() {
            return Err(format_err!(
                "record '{}' wants payload bytes {}..{} but only {} are present",
                entry.name,
                start,
                end,
                payload.len()
            ));
        }
        Ok(payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    };

    let mut extras = Vec::new();
    let mut param_cursor = 0usize;
    for entry in &header.names {
        if param_cursor < params.len() {
            let (name, tensor) = &params[param_cursor];
            if *name == entry.name {
                if tensor.shape() != entry.shape.as_slice() {
                    return Err(format_err!(
                        "record '{}' has shape {:?} but the model expects {:?}",
                        entry.name,
                        entry.shape,
                        tensor.shape()
                    ));
                }
                let values = read_record(entry)?;
                tensor.data_mut().copy_from_slice(&values);
                param_cursor += 1;
                continue;
            }
        }
        extras.push((entry.name.clone(), read_record(entry)?));
    }
    if param_cursor < params.len() {
        return Err(format_err!(
            "checkpoint is missing parameter '{}'",
            params[param_cursor].0
        ));
    }
    Ok(LoadedCheckpoint {
        model,
        extras,
        step: header.step,
    })
}
