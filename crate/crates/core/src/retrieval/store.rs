//! On-disk layout: `indices.json` lists the partitions; each partition has
//! a little-endian vector blob (`<name>.vec`) and its sparse statistics
//! (`<name>.sparse.json`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bm25Params, Bm25Stats, IndexScope, Indices, PartitionIndex};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::ClusterId;

const MAGIC: &[u8; 4] = b"MRTV";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: Bm25Params,
    partitions: Vec<ClusterId>,
}

#[derive(Serialize, Deserialize)]
struct SparseFile {
    scope: IndexScope,
    builds: u64,
    entry_ids: Vec<u64>,
    stats: Bm25Stats,
}

fn file_stem(c: ClusterId) -> String {
    match c {
        ClusterId::Cluster(k) => format!("partition-{k}"),
        ClusterId::Generic => "partition-generic".into(),
    }
}

fn encode_vectors(p: &PartitionIndex) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + p.entry_ids.len() * 8 + p.vectors.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(p.entry_ids.len() as u64).to_le_bytes());
    out.extend_from_slice(&(p.dimension as u64).to_le_bytes());
    for id in &p.entry_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for x in &p.vectors {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn decode_vectors(bytes: &[u8]) -> Result<(Vec<u64>, usize, Vec<f64>)> {
    let bad = |why: &str| Error::invalid("vector blob", why.to_string());
    let word = |at: usize| -> Result<[u8; 8]> {
        bytes
            .get(at..at + 8)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| bad("truncated"))
    };
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(bad("bad header"));
    }
    if u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) != VERSION {
        return Err(bad("unsupported version"));
    }
    let n = u64::from_le_bytes(word(8)?) as usize;
    let dim = u64::from_le_bytes(word(16)?) as usize;
    let expected = 24usize
        .checked_add(n.checked_mul(8 * (1 + dim)).ok_or_else(|| bad("size overflow"))?)
        .ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != expected {
        return Err(bad("length does not match header"));
    }
    let ids = (0..n).map(|i| word(24 + 8 * i).map(u64::from_le_bytes)).collect::<Result<_>>()?;
    let base = 24 + 8 * n;
    let vectors = (0..n * dim)
        .map(|i| word(base + 8 * i).map(f64::from_le_bytes))
        .collect::<Result<_>>()?;
    Ok((ids, dim, vectors))
}

pub(super) fn save(indices: &Indices, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (&c, p) in &indices.partitions {
        let stem = file_stem(c);
        let vec_path = dir.join(format!("{stem}.vec"));
        fs::write(&vec_path, encode_vectors(p)).map_err(|e| Error::io(&vec_path, e))?;
        let sparse = SparseFile {
            scope: p.scope,
            builds: p.builds,
            entry_ids: p.entry_ids.clone(),
            stats: p.sparse.clone(),
        };
        jsonl::write_json(&dir.join(format!("{stem}.sparse.json")), &sparse)?;
    }
    let manifest = Manifest {
        params: indices.params,
        partitions: indices.partitions.keys().copied().collect(),
    };
    jsonl::write_json(&dir.join("indices.json"), &manifest)
}

pub(super) fn load(dir: &Path) -> Result<Indices> {
    let manifest: Manifest = jsonl::read_json(&dir.join("indices.json"))?;
    let mut partitions = BTreeMap::new();
    for c in manifest.partitions {
        let stem = file_stem(c);
        let vec_path = dir.join(format!("{stem}.vec"));
        let bytes = fs::read(&vec_path).map_err(|e| Error::io(&vec_path, e))?;
        let (ids, dimension, vectors) = decode_vectors(&bytes)?;
        let sparse: SparseFile = jsonl::read_json(&dir.join(format!("{stem}.sparse.json")))?;
        if sparse.entry_ids != ids || sparse.stats.n_docs() != ids.len() {
            return Err(Error::invalid(
                "index",
                format!("{stem}: dense and sparse parts cover different entries"),
            ));
        }
        partitions.insert(
            c,
            PartitionIndex {
                scope: sparse.scope,
                entry_ids: ids,
                dimension,
                vectors,
                sparse: sparse.stats,
                builds: sparse.builds,
            },
        );
    }
    Ok(Indices {
        params: manifest.params,
        partitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_corrupt_blobs() {
        assert!(decode_vectors(b"nope").is_err());
        let mut blob = Vec::new();
        blob.extend_from_slice(MAGIC);
        blob.extend_from_slice(&VERSION.to_le_bytes());
        blob.extend_from_slice(&2u64.to_le_bytes());
        blob.extend_from_slice(&3u64.to_le_bytes());
        assert!(decode_vectors(&blob).is_err());
    }
}
