//! `EMB1` embedding store: a flat little-endian file of keyed f32 vectors.
//!
//! Layout:
//!
//! ```text
//! magic   b"EMB1"
//! version u16        (1)
//! dim     u32
//! count   u64
//! count x { sample_id u64, view_len u32, view_id [u8; view_len], dim x f32 }
//! ```

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

pub const STORE_MAGIC: [u8; 4] = *b"EMB1";
pub const STORE_VERSION: u16 = 1;

/// Stored norms further than this from 1 are renormalized with a warning.
pub const RENORM_TOLERANCE: f64 = 1e-3;
/// Stored norms this far from 1 or further are rejected.
pub const HARD_NORM_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub sample_id: u64,
    pub view_id: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dim: usize,
    records: Vec<StoreRecord>,
    index: HashMap<(u64, String), usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    /// Inserts or replaces a vector. Values are stored as f32.
    pub fn insert(&mut self, sample_id: u64, view_id: &str, vector: &[f64]) -> Result<()> {
        self.insert_f32(
            sample_id,
            view_id,
            vector.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn insert_f32(&mut self, sample_id: u64, view_id: &str, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let key = (sample_id, view_id.to_string());
        let rec = StoreRecord {
            sample_id,
            view_id: view_id.to_string(),
            vector,
        };
        match self.index.get(&key) {
            Some(&i) => self.records[i] = rec,
            None => {
                self.index.insert(key, self.records.len());
                self.records.push(rec);
            }
        }
        Ok(())
    }

    pub fn get(&self, sample_id: u64, view_id: &str) -> Option<&[f32]> {
        self.index
            .get(&(sample_id, view_id.to_string()))
            .map(|&i| self.records[i].vector.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.sample_id.to_le_bytes());
            out.extend_from_slice(&(r.view_id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.view_id.as_bytes());
            for v in &r.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a store, renormalizing vectors whose norm is off by more than
    /// [`RENORM_TOLERANCE`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
        if magic != STORE_MAGIC {
            return Err(Error::BadMagic {
                expected: STORE_MAGIC,
                found: magic,
            });
        }
        let version = cur.u16()?;
        if version != STORE_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let dim = cur.u32()? as usize;
        let count = cur.u64()?;
        let mut store = Self::new(dim);
        for _ in 0..count {
            let sample_id = cur.u64()?;
            let len = cur.u32()? as usize;
            let view_id = std::str::from_utf8(cur.take(len)?)
                .map_err(|e| Error::Parse(format!("view id is not UTF-8: {e}")))?
                .to_string();
            let raw = cur.take(4 * dim)?;
            let mut vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let norm = vector
                .iter()
                .map(|&v| f64::from(v).powi(2))
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() >= HARD_NORM_LIMIT {
                return Err(Error::NormOutOfRange(norm));
            }
            if (norm - 1.0).abs() > RENORM_TOLERANCE {
                log::warn!("renormalizing sample {sample_id} view `{view_id}` (norm {norm:.6})");
                vector = vector
                    .iter()
                    .map(|&v| (f64::from(v) / norm) as f32)
                    .collect();
            }
            store.insert_f32(sample_id, &view_id, vector)?;
        }
        Ok(store)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub fn write_store(path: &Path, store: &EmbeddingStore) -> Result<()> {
    store.write(path)
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    EmbeddingStore::read(path)
}

pub(crate) struct Cursor<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile)?;
        if end > self.bytes.len() {
            return Err(Error::TruncatedFile);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}
