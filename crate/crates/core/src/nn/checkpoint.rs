//! Model checkpoint file.
//!
//! Layout: one line of JSON (the header) terminated by `\n`, followed by
//! every parameter block of [`NetworkParams::blocks`] in order, each value
//! as a little-endian IEEE-754 `f64`. The header lists block names and
//! lengths so readers can validate the payload.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::network::{Architecture, NetworkParams};
use crate::error::{Error, Result};
use crate::features::ScalerParams;

pub const CHECKPOINT_FORMAT: &str = "cyclone-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Experiment metadata stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub t1: usize,
    pub t2: usize,
    pub seed: u64,
    /// Scaler fitted on the training storms.
    pub scaler: Option<ScalerParams>,
    /// File the scaler was also written to, if any.
    pub scaler_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub dropout: f64,
    #[serde(flatten)]
    pub meta: CheckpointMeta,
    pub blocks: Vec<BlockInfo>,
}

pub fn write_checkpoint<W: Write>(mut sink: W, meta: &CheckpointMeta, params: &NetworkParams) -> Result<()> {
    let blocks = params.blocks();
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        architecture: params.arch,
        dropout: params.arch.dropout,
        meta: meta.clone(),
        blocks: blocks
            .iter()
            .map(|(name, b)| BlockInfo {
                name: name.clone(),
                len: b.len(),
            })
            .collect(),
    };
    let io = |e| Error::io("<checkpoint>", e);
    let line = serde_json::to_string(&header)?;
    sink.write_all(line.as_bytes()).map_err(io)?;
    sink.write_all(b"\n").map_err(io)?;
    for (_, block) in &blocks {
        let mut bytes = Vec::with_capacity(block.len() * 8);
        for v in *block {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&bytes).map_err(io)?;
    }
    sink.flush().map_err(io)
}

pub fn read_checkpoint<R: BufRead>(mut source: R) -> Result<(CheckpointHeader, NetworkParams)> {
    let io = |e| Error::io("<checkpoint>", e);
    let mut line = Vec::new();
    source.read_until(b'\n', &mut line).map_err(io)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Checkpoint("missing header line".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    header.architecture.validate()?;
    let mut params = NetworkParams::zeros(header.architecture);
    let expected: Vec<(String, usize)> = params.blocks().iter().map(|(n, b)| (n.clone(), b.len())).collect();
    let declared: Vec<(String, usize)> = header.blocks.iter().map(|b| (b.name.clone(), b.len)).collect();
    if expected != declared {
        return Err(Error::Checkpoint("block layout does not match the architecture".into()));
    }
    for block in params.blocks_mut() {
        let mut bytes = vec![0u8; block.len() * 8];
        source
            .read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated parameter data: {e}")))?;
        for (v, chunk) in block.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    let mut rest = [0u8; 1];
    if source.read(&mut rest).map_err(io)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameter data".into()));
    }
    Ok((header, params))
}
