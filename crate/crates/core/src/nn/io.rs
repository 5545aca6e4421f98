use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, BnState, Layout, ParamVector};
use crate::error::{Error, Result};

/// Weights plus the metadata needed to rebuild the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub params: ParamVector,
    pub bn: Option<BnState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    layout: Layout,
    bn: Option<BnState>,
}

pub const HEADER_FILE: &str = "layout.json";
pub const PARAMS_FILE: &str = "params.bin";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialized `(layout.json, params.bin)` contents.
pub fn encode_checkpoint(checkpoint: &Checkpoint) -> Result<(Vec<u8>, Vec<u8>)> {
    let header = Header {
        architecture: checkpoint.arch.clone(),
        layout: checkpoint.params.layout.clone(),
        bn: checkpoint.bn.clone(),
    };
    let bytes: Vec<u8> = checkpoint.params.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    Ok((serde_json::to_vec_pretty(&header)?, bytes))
}

/// Writes `layout.json` and `params.bin` (little-endian f64) into `dir`.
pub fn save_checkpoint(dir: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (header, bytes) = encode_checkpoint(checkpoint)?;
    write_atomic(&dir.join(PARAMS_FILE), &bytes)?;
    write_atomic(&dir.join(HEADER_FILE), &header)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let header: Header = serde_json::from_slice(&fs::read(dir.join(HEADER_FILE))?)?;
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::LayoutMismatch("parameter file is not a whole number of f64s".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if header.layout != header.architecture.layout() {
        return Err(Error::LayoutMismatch("stored layout disagrees with the architecture".into()));
    }
    Ok(Checkpoint {
        params: ParamVector::new(header.layout, values)?,
        arch: header.architecture,
        bn: header.bn,
    })
}
