//! On-disk layout (all integers little-endian):
//!
//! ```text
//! magic "HRAGIDX\0" | version u32
//! params   : dim, n_clusters, min_doc, m, kmeans_iters, pq_iters (u32) | pq_train_cap, seed, n_docs (u64)
//! centroids: n_clusters * dim f32
//! codebook : m * 256 * (dim / m) f32
//! postings : per doc (u32 len, utf-8 id) | per cluster (u32 count, count * u32 ordinal)
//! codes    : n_docs * m bytes
//! trailer  : crc32 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClusterIndex, IndexParams, PqCodebook, CODEWORDS};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"HRAGIDX\0";
pub const INDEX_VERSION: u32 = 1;

const PARAMS_BYTES: usize = 6 * 4 + 3 * 8;

/// Byte accounting of a serialized index, measured from the bytes themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub total_bytes: usize,
    pub header_bytes: usize,
    pub centroid_bytes: usize,
    pub codebook_bytes: usize,
    pub postings_bytes: usize,
    pub code_bytes: usize,
    pub n_docs: usize,
    pub dim: usize,
    pub m: usize,
    pub code_bytes_per_doc: f64,
    /// What an uncompressed f32 vector of the same dimension would take.
    pub raw_bytes_per_doc: usize,
}

impl StorageReport {
    pub fn compression_ratio(&self) -> f64 {
        self.raw_bytes_per_doc as f64 / self.code_bytes_per_doc
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize32(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| Error::Format("block size overflow".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Decoded {
    index: ClusterIndex,
    report: StorageReport,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    if bytes.len() < INDEX_MAGIC.len() + 4 + 4 {
        return Err(Error::Format("file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(8)? != INDEX_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = r.usize32()?;
    let n_clusters = r.usize32()?;
    let min_doc = r.usize32()?;
    let m = r.usize32()?;
    let kmeans_iterations = r.usize32()?;
    let pq_iterations = r.usize32()?;
    let pq_train_cap = r.u64()? as usize;
    let seed = r.u64()?;
    let n_docs = r.u64()? as usize;
    let header_bytes = r.pos;
    if dim == 0 || m == 0 || dim % m != 0 || n_clusters == 0 {
        return Err(Error::Format("inconsistent params block".into()));
    }

    let start = r.pos;
    let centroids = r.f32s(n_clusters * dim)?;
    let centroid_bytes = r.pos - start;

    let start = r.pos;
    let codewords = r.f32s(m * CODEWORDS * (dim / m))?;
    let codebook = PqCodebook::from_codewords(dim, m, codewords)?;
    let codebook_bytes = r.pos - start;

    let start = r.pos;
    let mut doc_ids = Vec::with_capacity(n_docs.min(body.len()));
    for _ in 0..n_docs {
        let len = r.usize32()?;
        let raw = r.take(len)?;
        let id = std::str::from_utf8(raw).map_err(|_| Error::Format("doc id is not utf-8".into()))?;
        doc_ids.push(id.to_owned());
    }
    let mut assignments = vec![u32::MAX; n_docs];
    let mut postings = Vec::with_capacity(n_clusters);
    for c in 0..n_clusters {
        let count = r.usize32()?;
        let mut list = Vec::with_capacity(count.min(n_docs));
        for _ in 0..count {
            let o = r.u32()?;
            let slot = assignments
                .get_mut(o as usize)
                .ok_or_else(|| Error::Format(format!("ordinal {o} out of range")))?;
            if *slot != u32::MAX {
                return Err(Error::Format(format!("doc {o} listed twice")));
            }
            *slot = c as u32;
            list.push(o);
        }
        postings.push(list);
    }
    if assignments.contains(&u32::MAX) {
        return Err(Error::Format("document missing from postings".into()));
    }
    let postings_bytes = r.pos - start;

    let codes = r.take(n_docs * m)?.to_vec();
    let code_bytes = codes.len();
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes before checksum".into()));
    }

    let params = IndexParams {
        dim,
        n_clusters,
        min_doc,
        m,
        kmeans_iterations,
        pq_iterations,
        pq_train_cap,
        seed,
    };
    let index = ClusterIndex::from_parts(params, centroids, doc_ids, assignments, postings, codebook, codes);
    if index.id_lookup.len() != n_docs {
        return Err(Error::Format("duplicate doc ids".into()));
    }
    let report = StorageReport {
        total_bytes: bytes.len(),
        header_bytes,
        centroid_bytes,
        codebook_bytes,
        postings_bytes,
        code_bytes,
        n_docs,
        dim,
        m,
        code_bytes_per_doc: if n_docs == 0 { 0.0 } else { code_bytes as f64 / n_docs as f64 },
        raw_bytes_per_doc: dim * std::mem::size_of::<f32>(),
    };
    Ok(Decoded { index, report })
}

impl ClusterIndex {
    /// Serializes to the binary layout described in the module docs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(PARAMS_BYTES + self.codes.len() + self.centroids.len() * 4 + 64);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        for v in [p.dim, self.n_clusters(), p.min_doc, p.m, p.kmeans_iterations, p.pq_iterations] {
            put_u32(&mut out, v);
        }
        out.extend_from_slice(&(p.pq_train_cap as u64).to_le_bytes());
        out.extend_from_slice(&p.seed.to_le_bytes());
        out.extend_from_slice(&(self.doc_ids.len() as u64).to_le_bytes());
        put_f32s(&mut out, &self.centroids);
        put_f32s(&mut out, self.codebook.codewords());
        for id in &self.doc_ids {
            put_u32(&mut out, id.len());
            out.extend_from_slice(id.as_bytes());
        }
        for list in &self.postings {
            put_u32(&mut out, list.len());
            for &o in list {
                out.extend_from_slice(&o.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.codes);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes).map(|d| d.index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Byte accounting of this index's serialized form.
    pub fn storage_report(&self) -> StorageReport {
        StorageReport::from_bytes(&self.to_bytes()).expect("freshly serialized index decodes")
    }
}

impl StorageReport {
    /// Parses and validates a serialized index, measuring each block.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes).map(|d| d.report)
    }
}
