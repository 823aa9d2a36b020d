//! Binary checkpoint: the 8-byte magic `ABICKPT1`, a little-endian u64 header
//! length, a JSON header, then the parameters as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Proposal, ProposalKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ABICKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: ProposalKind,
    pub dim: usize,
    pub n_params: usize,
    pub seed: u64,
    /// Auxiliary coordinates appended to the target, 0 if none.
    #[serde(default)]
    pub aux: usize,
}

pub fn write_checkpoint<W: Write>(mut w: W, proposal: &Proposal, seed: u64, aux: usize) -> Result<()> {
    let header = CheckpointHeader {
        architecture: proposal.kind.clone(),
        dim: proposal.dim,
        n_params: proposal.params.len(),
        seed,
        aux,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in &proposal.params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Proposal, CheckpointHeader)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Io("not a proposal checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut params = Vec::with_capacity(header.n_params);
    let mut buf = [0u8; 8];
    for _ in 0..header.n_params {
        r.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    let proposal = Proposal::with_params(header.architecture.clone(), header.dim, params)?;
    Ok((proposal, header))
}

pub fn save_checkpoint(path: &Path, proposal: &Proposal, seed: u64, aux: usize) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, proposal, seed, aux)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Proposal, CheckpointHeader)> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_checkpoint(std::io::BufReader::new(f))
}
