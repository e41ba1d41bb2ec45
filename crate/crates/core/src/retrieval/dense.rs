//! Exhaustive cosine search over precomputed embeddings.
//!
//! Embedding file layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "RAGLABEM"
//! dim     u32
//! count   u64
//! norm    u8       1 if every vector is unit length
//! count × { id_len u32, id bytes (UTF-8), dim × f32 }
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::corpus::QueryRecord;
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

pub const MAGIC: &[u8; 8] = b"RAGLABEM";
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    normalized: bool,
    vectors: BTreeMap<String, Vec<f32>>,
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

impl EmbeddingTable {
    pub fn new(dim: usize, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            normalized,
            vectors: BTreeMap::new(),
        })
    }

    /// Builds a table from unnormalized vectors, scaling each to unit length
    /// (zero vectors are kept as-is).
    pub fn normalized_from(dim: usize, rows: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut t = EmbeddingTable::new(dim, true)?;
        for (id, mut v) in rows {
            let n = l2(&v);
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
            }
            t.insert(id, v)?;
        }
        Ok(t)
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let id = id.into();
        if self.normalized {
            let n = l2(&vector);
            if n != 0.0 && (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::InvalidConfig(format!(
                    "vector {id:?} has norm {n}, table is marked normalized"
                )));
            }
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.vectors.len() as u64).to_le_bytes())?;
        out.write_all(&[self.normalized as u8])?;
        for (id, v) in &self.vectors {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from<R: Read>(input: &mut R) -> std::result::Result<Self, String> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("not a raglab embedding file".into());
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut b1 = [0u8; 1];
        input.read_exact(&mut b4).map_err(|e| e.to_string())?;
        let dim = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b8).map_err(|e| e.to_string())?;
        let count = u64::from_le_bytes(b8);
        input.read_exact(&mut b1).map_err(|e| e.to_string())?;
        let normalized = match b1[0] {
            0 => false,
            1 => true,
            other => return Err(format!("bad normalized flag {other}")),
        };
        let mut table = EmbeddingTable::new(dim, normalized).map_err(|e| e.to_string())?;
        for _ in 0..count {
            input.read_exact(&mut b4).map_err(|e| e.to_string())?;
            let mut id = vec![0u8; u32::from_le_bytes(b4) as usize];
            input.read_exact(&mut id).map_err(|e| e.to_string())?;
            let id = String::from_utf8(id).map_err(|e| e.to_string())?;
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                input.read_exact(&mut b4).map_err(|e| e.to_string())?;
                v.push(f32::from_le_bytes(b4));
            }
            if table.vectors.contains_key(&id) {
                return Err(format!("duplicate id {id:?}"));
            }
            table.insert(id, v).map_err(|e| e.to_string())?;
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest).map_err(|e| e.to_string())? != 0 {
            return Err("trailing bytes after last record".into());
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|reason| Error::BadEmbeddingFile {
            path: path.to_path_buf(),
            reason,
        })
    }
}

/// Cosine similarity; a zero vector scores 0 against everything.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let denom = l2(a) * l2(b);
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Scores every passage vector against the query's vector and keeps the
/// top `k`. Uses the plain dot product when both tables are normalized.
pub fn dense_search(
    query: &QueryRecord,
    queries: &EmbeddingTable,
    passages: &EmbeddingTable,
    k: usize,
    retriever_id: &str,
) -> Result<RankedList> {
    if queries.dim != passages.dim {
        return Err(Error::DimensionMismatch {
            expected: passages.dim,
            got: queries.dim,
        });
    }
    if passages.is_empty() {
        return Err(Error::InvalidConfig("passage embedding table is empty".into()));
    }
    let qv = queries
        .get(&query.id)
        .ok_or_else(|| Error::MissingQueryVector(query.id.clone()))?;
    let use_dot = queries.normalized && passages.normalized;
    let scored = passages
        .iter()
        .map(|(id, v)| {
            let s = if use_dot { dot(qv, v) } else { cosine(qv, v) };
            (id.to_string(), s)
        })
        .collect();
    Ok(RankedList::from_scores(&query.id, retriever_id, scored, k))
}
