//! Exact (flat) inner-product vector store.
//!
//! Search scores every entry and sorts by score descending with ties broken
//! by ascending id, so results are total-ordered and reproducible.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{dot, Embedding};
use crate::error::{Error, Result};
use crate::par;

const INDEX_MAGIC: &[u8; 4] = b"UIDX";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub embedding: Embedding,
    pub payload: String,
}

/// Identifier-to-embedding store supporting exact top-k inner-product search.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Builds an index over exactly the given items. Ids must be unique and all
/// embeddings must share one dimension.
pub fn build(items: Vec<(String, Embedding, String)>) -> Result<VectorIndex> {
    let dim = items.first().map(|(_, e, _)| e.dim()).unwrap_or(0);
    let mut seen = HashSet::with_capacity(items.len());
    let mut entries = Vec::with_capacity(items.len());
    for (id, embedding, payload) in items {
        if embedding.dim() != dim {
            return Err(Error::invalid(format!(
                "embedding for {id} has dim {}, expected {dim}",
                embedding.dim()
            )));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::invalid(format!("duplicate id {id}")));
        }
        entries.push(IndexEntry { id, embedding, payload });
    }
    Ok(VectorIndex { dim, entries })
}

fn top_k_from_scores(index: &VectorIndex, mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| index.entries[a.0].id.cmp(&index.entries[b.0].id))
    });
    scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (index.entries[i].id.clone(), s))
        .collect()
}

/// Exact top-k by inner product: scores non-increasing, ties by smaller id
/// first, exactly `min(k, len)` results.
pub fn search(index: &VectorIndex, query: &Embedding, k: usize) -> Result<Vec<(String, f64)>> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if !index.is_empty() && query.dim() != index.dim {
        return Err(Error::invalid(format!(
            "query dim {} != index dim {}",
            query.dim(),
            index.dim
        )));
    }
    let scored: Vec<(usize, f64)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i, dot(&query.vector, &e.embedding.vector)))
        .collect();
    Ok(top_k_from_scores(index, scored, k))
}

/// Searches many queries; parallel across queries when the `parallel` feature
/// is on. Output order matches query order.
pub fn search_batch(index: &VectorIndex, queries: &[Embedding], k: usize) -> Result<Vec<Vec<(String, f64)>>> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    for q in queries {
        if !index.is_empty() && q.dim() != index.dim {
            return Err(Error::invalid("query dimension mismatch"));
        }
    }
    Ok(par::map_slice(queries, |q| search(index, q, k).expect("validated")))
}

/// Sequential twin of [`search_batch`].
pub fn search_batch_seq(index: &VectorIndex, queries: &[Embedding], k: usize) -> Result<Vec<Vec<(String, f64)>>> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    for q in queries {
        if !index.is_empty() && q.dim() != index.dim {
            return Err(Error::invalid("query dimension mismatch"));
        }
    }
    Ok(par::map_slice_seq(queries, |q| search(index, q, k).expect("validated")))
}

/// Index file: header {magic "UIDX", version u32, d u32, n u64}, then per
/// entry {id length u32, id bytes, payload length u32, payload bytes, d f64
/// values}. Little-endian throughout; round trips are bit-exact.
pub fn save(index: &VectorIndex, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(INDEX_MAGIC)?;
    w.write_all(&INDEX_VERSION.to_le_bytes())?;
    w.write_all(&(index.dim as u32).to_le_bytes())?;
    w.write_all(&(index.entries.len() as u64).to_le_bytes())?;
    for entry in &index.entries {
        w.write_all(&(entry.id.len() as u32).to_le_bytes())?;
        w.write_all(entry.id.as_bytes())?;
        w.write_all(&(entry.payload.len() as u32).to_le_bytes())?;
        w.write_all(entry.payload.as_bytes())?;
        for v in &entry.embedding.vector {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<VectorIndex> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != INDEX_MAGIC {
        return Err(Error::Format("bad index magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != INDEX_VERSION {
        return Err(Error::Format(format!(
            "unsupported index version {version} (expected {INDEX_VERSION})"
        )));
    }
    let dim = read_u32(&mut r)? as usize;
    let n = read_u64(&mut r)? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let id = read_string(&mut r)?;
        let payload = read_string(&mut r)?;
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            let mut buf = [0u8; 8];
            read_exact(&mut r, &mut buf)?;
            vector.push(f64::from_le_bytes(buf));
        }
        entries.push(IndexEntry { id, embedding: Embedding { vector }, payload });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after index payload".into()));
    }
    let items: Vec<(String, Embedding, String)> =
        entries.into_iter().map(|e| (e.id, e.embedding, e.payload)).collect();
    let index = build(items).map_err(|e| Error::Format(format!("invalid index contents: {e}")))?;
    if index.len() != n {
        return Err(Error::Format("entry count mismatch".into()));
    }
    if !index.is_empty() && index.dim != dim {
        return Err(Error::Format("dimension mismatch in index file".into()));
    }
    Ok(VectorIndex { dim, entries: index.entries })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("unexpected end of file".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 in index file".into()))
}
