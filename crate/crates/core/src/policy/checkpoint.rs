//! Flat little-endian `f32` parameters (`.bin`) with a JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{NetShape, PolicyNet};
use crate::error::CheckpointError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format: String,
    pub param_count: usize,
    pub net: NetShape,
    pub blocks: Vec<ParamBlock>,
}

const FORMAT: &str = "f32-le";

fn sidecar(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)
}

/// Writes `path` (parameters) and `path` with a `.json` extension (layout).
pub fn save_checkpoint(net: &PolicyNet<f32>, path: &Path) -> Result<(), CheckpointError> {
    let shape = net.shape().clone();
    let meta = CheckpointMeta {
        format: FORMAT.into(),
        param_count: shape.param_count(),
        blocks: shape.blocks(),
        net: shape,
    };
    let bytes: Vec<u8> = net.params().iter().flat_map(|p| p.to_le_bytes()).collect();
    write_atomic(path, &bytes)?;
    write_atomic(&sidecar(path), serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyNet<f32>, CheckpointError> {
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(sidecar(path))?)?;
    if meta.format != FORMAT {
        return Err(CheckpointError::Corrupt(format!("unknown format {:?}", meta.format)));
    }
    if meta.blocks != meta.net.blocks() || meta.param_count != meta.net.param_count() {
        return Err(CheckpointError::Corrupt("sidecar layout disagrees with its shape".into()));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * meta.param_count {
        return Err(CheckpointError::Corrupt(format!(
            "{} bytes for {} parameters",
            bytes.len(),
            meta.param_count
        )));
    }
    let params = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    PolicyNet::from_params(meta.net, params).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}
