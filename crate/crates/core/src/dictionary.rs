//! The online dictionary `D = [I_n | B]`.
//!
//! The identity block models per-dimension noise and is never stored: its
//! products are evaluated analytically. The image block `B` grows by one unit
//! column per accepted frame and existing columns are never modified.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{descriptors, FeatureVector};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnKind {
    Noise,
    Image,
}

/// Position of a column in the solver-facing matrix `[I_n | B]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ColumnIndex {
    raw: usize,
    n: usize,
}

impl ColumnIndex {
    pub fn new(raw: usize, n: usize) -> Self {
        Self { raw, n }
    }

    pub fn raw(self) -> usize {
        self.raw
    }

    pub fn kind(self) -> ColumnKind {
        if self.raw < self.n {
            ColumnKind::Noise
        } else {
            ColumnKind::Image
        }
    }

    /// Index into the image block, `None` for noise columns.
    pub fn image_index(self) -> Option<usize> {
        self.raw.checked_sub(self.n)
    }
}

/// Bookkeeping for one appended image column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_index: usize,
    pub timestamp: f64,
    pub source_tag: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    n: usize,
    /// Image columns, contiguous, column `k` at `data[k*n..(k+1)*n]`.
    data: Vec<f64>,
    meta: Vec<FrameMeta>,
}

impl Dictionary {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::BadDimensions("feature dimension must be >= 1".into()));
        }
        Ok(Self {
            n,
            data: Vec::new(),
            meta: Vec::new(),
        })
    }

    /// Feature dimension, also the size of the noise block.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of image columns `m`.
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Solver-facing width `n + m`.
    pub fn width(&self) -> usize {
        self.n + self.len()
    }

    pub fn index(&self, raw: usize) -> Result<ColumnIndex> {
        if raw >= self.width() {
            return Err(Error::OutOfRange {
                index: raw,
                width: self.width(),
            });
        }
        Ok(ColumnIndex::new(raw, self.n))
    }

    /// Appends `f` as the next image column and returns its image index.
    pub fn append(&mut self, f: &FeatureVector, frame_index: usize, timestamp: f64) -> Result<usize> {
        if f.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: f.dim(),
            });
        }
        self.data.extend_from_slice(f.values());
        self.meta.push(FrameMeta {
            frame_index,
            timestamp,
            source_tag: f.source_tag().to_string(),
        });
        Ok(self.meta.len() - 1)
    }

    pub fn column(&self, idx: ColumnIndex) -> Result<FeatureVector> {
        let idx = self.index(idx.raw())?;
        match idx.image_index() {
            None => {
                let mut e = vec![0.0; self.n];
                e[idx.raw()] = 1.0;
                FeatureVector::from_unit(e, "noise")
            }
            Some(k) => FeatureVector::from_unit(
                self.image_column(k).to_vec(),
                self.meta[k].source_tag.clone(),
            ),
        }
    }

    pub fn image_column(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    pub fn image_columns(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n)
    }

    pub fn meta(&self) -> &[FrameMeta] {
        &self.meta
    }

    /// `d_rawᵀ v`.
    pub fn col_dot(&self, raw: usize, v: &[f64]) -> f64 {
        if raw < self.n {
            v[raw]
        } else {
            linalg::dot(self.image_column(raw - self.n), v)
        }
    }

    /// `d_aᵀ d_b`.
    pub fn gram(&self, a: usize, b: usize) -> f64 {
        match (a < self.n, b < self.n) {
            (true, true) => (a == b) as u8 as f64,
            (true, false) => self.image_column(b - self.n)[a],
            (false, true) => self.image_column(a - self.n)[b],
            (false, false) => linalg::dot(self.image_column(a - self.n), self.image_column(b - self.n)),
        }
    }

    /// `out += s * d_raw`.
    pub fn add_column(&self, raw: usize, s: f64, out: &mut [f64]) {
        if raw < self.n {
            out[raw] += s;
        } else {
            linalg::axpy(s, self.image_column(raw - self.n), out);
        }
    }

    /// `Dᵀ v` over all `n + m` columns.
    pub fn correlate(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        out.extend_from_slice(v);
        out.extend(self.image_columns().map(|c| linalg::dot(c, v)));
        out
    }

    /// `(Dᵀ x, Dᵀ y)` computed in one sweep over the stored columns.
    pub fn correlate2(&self, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut px = Vec::with_capacity(self.width());
        let mut py = Vec::with_capacity(self.width());
        px.extend_from_slice(x);
        py.extend_from_slice(y);
        for c in self.image_columns() {
            let (a, b) = linalg::dot2(c, x, y);
            px.push(a);
            py.push(b);
        }
        (px, py)
    }

    /// `D α` for a sparse coefficient list of `(raw, value)` pairs.
    pub fn synthesize(&self, coeffs: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &(raw, v) in coeffs {
            self.add_column(raw, v, &mut out);
        }
        out
    }

    /// Writes the image block as LCDF plus a `frame_index,timestamp,source_tag` sidecar.
    pub fn save(&self, lcdf: impl AsRef<Path>, meta_csv: impl AsRef<Path>) -> Result<()> {
        let cols: Vec<&[f64]> = self.image_columns().collect();
        if cols.is_empty() {
            // An empty LCDF cannot carry the dimension; write a zero-count header with it.
            let path = lcdf.as_ref();
            let mut bytes = descriptors::LCDF_MAGIC.to_vec();
            bytes.extend_from_slice(&0u32.to_le_bytes());
            bytes.extend_from_slice(&(self.n as u32).to_le_bytes());
            std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        } else {
            descriptors::save_lcdf(lcdf, &cols)?;
        }
        let mut w = csv::Writer::from_path(meta_csv.as_ref())?;
        for m in &self.meta {
            w.serialize(m)?;
        }
        w.flush().map_err(|e| Error::io(meta_csv.as_ref(), e))
    }

    pub fn load(lcdf: impl AsRef<Path>, meta_csv: impl AsRef<Path>) -> Result<Self> {
        let path = lcdf.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let records = descriptors::parse_lcdf(&bytes)?;
        let n = if bytes.len() >= 12 {
            u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize
        } else {
            0
        };
        let mut dict = Dictionary::new(n)?;
        let mut rdr = csv::Reader::from_path(meta_csv.as_ref())?;
        let meta: Vec<FrameMeta> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        if meta.len() != records.len() {
            return Err(Error::DimensionMismatch {
                expected: records.len(),
                found: meta.len(),
            });
        }
        for (values, m) in records.into_iter().zip(meta) {
            let f = FeatureVector::from_unit(values, m.source_tag.clone())?;
            dict.append(&f, m.frame_index, m.timestamp)?;
        }
        Ok(dict)
    }
}
