//! Chain states as a raw little-endian f64 matrix (`u64` rows, `u64` cols,
//! then row-major data) with a JSON sidecar.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub target: String,
    /// SHA-256 of the checkpoint of the proposal that produced the chain, if any.
    pub proposal_checkpoint_sha256: Option<String>,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub data_sha256: String,
}

fn encode(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(&(m.rows as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols as u64).to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Write `states` to `path` and the sidecar to `path` with `.json` appended.
pub fn write_trace(path: &Path, states: &Matrix, target: &str, proposal_checkpoint_sha256: Option<String>, seed: u64) -> Result<TraceSidecar> {
    let bytes = encode(states);
    let sidecar = TraceSidecar {
        target: target.to_string(),
        proposal_checkpoint_sha256,
        seed,
        rows: states.rows,
        cols: states.cols,
        data_sha256: sha256_hex(&bytes),
    };
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::Io(format!("{}: {e}", side.display())))?;
    Ok(sidecar)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Read a trace and verify it against its sidecar hash.
pub fn read_trace(path: &Path) -> Result<(Matrix, TraceSidecar)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let side = sidecar_path(path);
    let sidecar: TraceSidecar = serde_json::from_slice(&std::fs::read(&side).map_err(|e| Error::Io(format!("{}: {e}", side.display())))?)?;
    if sha256_hex(&bytes) != sidecar.data_sha256 {
        return Err(Error::Io(format!("{}: data does not match sidecar hash", path.display())));
    }
    if bytes.len() < 16 {
        return Err(Error::Io("truncated trace".into()));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 16 + 8 * rows * cols {
        return Err(Error::Io("trace length does not match its header".into()));
    }
    let data = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((Matrix::new(rows, cols, data), sidecar))
}
