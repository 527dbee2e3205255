//! Single-file parameter container.
//!
//! Layout: magic "BPG1", u32 format version, u64 manifest byte length,
//! JSON manifest (rng algorithm, seed, named entries with shape and
//! offset), then little-endian f64 payloads back to back. Offsets are
//! element offsets from the start of the payload section.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;

const MAGIC: &[u8; 4] = b"BPG1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    rng_algorithm: String,
    rng_seed: u64,
    entries: Vec<CheckpointEntry>,
}

pub fn save_checkpoint(
    path: &Path,
    tensors: &[(String, Vec<usize>, Vec<f64>)],
    rng_algorithm: &str,
    rng_seed: u64,
) -> Result<(), Error> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, shape, data) in tensors {
        entries.push(CheckpointEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        offset += data.len() as u64;
    }
    let manifest = Manifest {
        rng_algorithm: rng_algorithm.to_string(),
        rng_seed,
        entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, _, data) in tensors {
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[allow(clippy::type_complexity)]
pub fn load_checkpoint(path: &Path) -> Result<(Vec<(String, Vec<usize>, Vec<f64>)>, String, u64), Error> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let mlen = u64::from_le_bytes(buf8) as usize;
    let mut mbytes = vec![0u8; mlen];
    r.read_exact(&mut mbytes)?;
    let manifest: Manifest =
        serde_json::from_slice(&mbytes).map_err(|e| Error::Data(format!("bad checkpoint manifest: {e}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut tensors = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize * 8;
        let end = start + numel * 8;
        if end > payload.len() {
            return Err(Error::Data(format!("checkpoint entry {} exceeds payload", entry.name)));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((entry.name.clone(), entry.shape.clone(), data));
    }
    Ok((tensors, manifest.rng_algorithm, manifest.rng_seed))
}
