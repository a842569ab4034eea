//! Binary embedding checkpoints.
//!
//! Layout (little endian): 8-byte magic `MKGCTRE1`, then `dim`, `n_entities`,
//! `n_relations` as u64, then entity rows and relation rows as f64. A JSON
//! sidecar next to the file records the training config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, TransEConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 8] = b"MKGCTRE1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub config: TransEConfig,
    pub seed: u64,
    pub dim: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub epoch_loss: Vec<f64>,
}

/// One line of a candidate export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub h: u64,
    pub r: u64,
    pub lang: String,
    pub gold: u64,
    pub candidates: Vec<u64>,
    pub scores: Vec<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn save_checkpoint(table: &EmbeddingTable, sidecar: &CheckpointSidecar, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + 8 * (table.entities.len() + table.relations.len()));
    buf.extend_from_slice(MAGIC);
    for v in [table.dim(), table.n_entities(), table.n_relations()] {
        buf.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for x in table.entities.data().iter().chain(table.relations.data()) {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(sidecar)?).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(EmbeddingTable, Option<CheckpointSidecar>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse { path: path.to_path_buf(), line: 0, msg: msg.to_string() };
    if bytes.len() < 32 || &bytes[..8] != MAGIC {
        return Err(bad("not an embedding checkpoint"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().expect("8 bytes")) as usize;
    let (dim, n_e, n_r) = (word(0), word(1), word(2));
    let expected = 32 + 8 * dim * (n_e + n_r);
    if bytes.len() != expected {
        return Err(bad(&format!("payload size {} != expected {expected}", bytes.len())));
    }
    let floats: Vec<f64> =
        bytes[32..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let (ent, rel) = floats.split_at(dim * n_e);
    let table = EmbeddingTable {
        entities: Matrix::from_vec(n_e, dim, ent.to_vec())?,
        relations: Matrix::from_vec(n_r, dim, rel.to_vec())?,
    };
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    Ok((table, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kge.bin");
        let table = EmbeddingTable::init(5, 2, 3, 9);
        let side = CheckpointSidecar {
            config: TransEConfig::default(),
            seed: 9,
            dim: 3,
            n_entities: 5,
            n_relations: 2,
            epoch_loss: vec![0.5],
        };
        save_checkpoint(&table, &side, &path).unwrap();
        let (back, s) = load_checkpoint(&path).unwrap();
        assert_eq!(back, table);
        assert_eq!(s.unwrap(), side);

        fs::write(&path, b"garbage").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
