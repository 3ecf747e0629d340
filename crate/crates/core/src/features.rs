//! Dense feature matrices and their on-disk cache.
//!
//! Cache layout (all integers little-endian):
//!
//! ```text
//! "DFCV1\0" | u64 N | u64 D | N*D f32 row-major | JSON trailer
//! ```
//!
//! The trailer is `{"ids": [...], "provenance": {...}, "trailer_offset": u64}`
//! where `trailer_offset` is the byte offset at which the trailer starts.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 6] = b"DFCV1\0";
const HEADER_LEN: usize = 6 + 8 + 8;

/// Which network and tap produced a feature matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub layer: String,
    /// Hex digest of the full model spec (see [`crate::extract::ModelSpec::digest`]).
    pub digest: String,
}

impl Provenance {
    pub fn synthetic(label: &str) -> Self {
        Provenance {
            model: "synthetic".into(),
            layer: label.into(),
            digest: String::new(),
        }
    }
}

/// Borrowed row-major `n x d` view over `f32` data.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    data: &'a [f32],
    n: usize,
    d: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f32], n: usize, d: usize) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::Shape(format!(
                "{} values cannot form a {n}x{d} matrix",
                data.len()
            )));
        }
        Ok(Points { data, n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j))
    }
}

/// Squared Euclidean distance, `f32` inputs accumulated in `f64`.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Squared distance between an `f32` row and an `f64` centre.
#[inline]
pub fn sq_dist_mixed(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    n: usize,
    d: usize,
    ids: Vec<String>,
    provenance: Provenance,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f32>, d: usize, ids: Vec<String>, provenance: Provenance) -> Result<Self> {
        let n = ids.len();
        if data.len() != n * d {
            return Err(Error::Shape(format!(
                "{} values for {n} ids of dimension {d}",
                data.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Shape(format!("duplicate feature row id `{id}`")));
            }
        }
        if let Some(row) = data.iter().position(|v| !v.is_finite()).and_then(|pos| pos.checked_div(d)) {
            return Err(Error::NonFinite {
                row,
                record: ids[row].clone(),
            });
        }
        Ok(FeatureMatrix {
            data,
            n,
            d,
            ids,
            provenance,
        })
    }

    /// Convenience constructor for in-memory data with generated ids.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        FeatureMatrix::new(rows.concat(), d, ids, Provenance::synthetic("rows"))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> Points<'_> {
        Points {
            data: &self.data,
            n: self.n,
            d: self.d,
        }
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Result<FeatureMatrix> {
        let index: HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Shape(format!("no feature row for record `{id}`")))?;
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(data, self.d, ids.to_vec(), self.provenance.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let trailer = Trailer {
            ids: self.ids.clone(),
            provenance: self.provenance.clone(),
            trailer_offset: (HEADER_LEN + 4 * self.data.len()) as u64,
        };
        let io = |e| Error::io(path, e);
        w.write_all(CACHE_MAGIC).map_err(io)?;
        w.write_all(&(self.n as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.d as u64).to_le_bytes()).map_err(io)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        serde_json::to_writer(&mut w, &trailer).map_err(|e| Error::json(path, e))?;
        w.flush().map_err(io)
    }

    /// Loads a cache; with `expected_digest`, a provenance mismatch is a
    /// [`Error::StaleCache`].
    pub fn load(path: impl AsRef<Path>, expected_digest: Option<&str>) -> Result<FeatureMatrix> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let m = decode(&bytes)?;
        if let Some(expected) = expected_digest {
            if m.provenance.digest != expected {
                return Err(Error::StaleCache {
                    path: path.to_path_buf(),
                    expected: expected.to_string(),
                    found: m.provenance.digest,
                });
            }
        }
        Ok(m)
    }
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    ids: Vec<String>,
    provenance: Provenance,
    trailer_offset: u64,
}

fn decode(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN || &bytes[..6] != CACHE_MAGIC {
        return Err(Error::CacheFormat("missing DFCV1 header".into()));
    }
    let n = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let body = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Error::CacheFormat(format!("implausible shape {n}x{d}")))?;
    let offset = HEADER_LEN + body;
    if bytes.len() < offset {
        return Err(Error::CacheFormat(format!(
            "truncated: {} bytes, need {offset} for {n}x{d} body",
            bytes.len()
        )));
    }
    let trailer: Trailer = serde_json::from_slice(&bytes[offset..])
        .map_err(|e| Error::CacheFormat(format!("bad trailer: {e}")))?;
    if trailer.trailer_offset as usize != offset {
        return Err(Error::CacheFormat(format!(
            "trailer offset {} does not match body end {offset}",
            trailer.trailer_offset
        )));
    }
    if trailer.ids.len() as u64 != n {
        return Err(Error::CacheFormat(format!(
            "{} ids for {n} rows",
            trailer.ids.len()
        )));
    }
    let data = bytes[HEADER_LEN..offset]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(data, d as usize, trailer.ids, trailer.provenance)
}
