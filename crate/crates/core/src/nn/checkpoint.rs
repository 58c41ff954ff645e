//! Checkpoints: magic, a length-prefixed JSON header holding the spec, then
//! the raw little-endian parameter vector.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::network::{Network, NetworkParams, NetworkSpec};

const MAGIC: &[u8; 8] = b"EXLBCKP1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    n_params: usize,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    spec: &NetworkSpec,
    params: &NetworkParams,
) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        spec: spec.clone(),
        n_params: params.values.len(),
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(params.values.len() * 8);
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(NetworkSpec, NetworkParams)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Corruption("not a network checkpoint".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let net = Network::build(&header.spec)?;
    if net.n_params() != header.n_params {
        return Err(Error::Corruption(format!(
            "header declares {} parameters but the spec implies {}",
            header.n_params,
            net.n_params()
        )));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != header.n_params * 8 {
        return Err(Error::Corruption(format!(
            "expected {} parameter bytes, found {}",
            header.n_params * 8,
            raw.len()
        )));
    }
    let values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header.spec, NetworkParams { values }))
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, params: &NetworkParams) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, spec, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, NetworkParams)> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
