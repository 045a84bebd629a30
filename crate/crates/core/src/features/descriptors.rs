//! Precomputed descriptor files.
//!
//! Two layouts are supported:
//!
//! * CSV: one vector per line, comma-separated decimal floats, no header.
//! * LCDF: the magic bytes `LCD1`, then `count: u32 LE`, `dim: u32 LE`,
//!   then `count × dim` little-endian `f64` values in record order.
//!
//! Records are normalized to unit length on load, whatever their stored scale.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::FeatureVector;

pub const LCDF_MAGIC: &[u8; 4] = b"LCD1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorFormat {
    Csv,
    Lcdf,
}

impl DescriptorFormat {
    /// Picks the format from a file extension; anything but `.csv` is LCDF.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DescriptorFormat::Csv,
            _ => DescriptorFormat::Lcdf,
        }
    }
}

pub fn load_descriptors(path: impl AsRef<Path>, format: DescriptorFormat) -> Result<Vec<FeatureVector>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = match format {
        DescriptorFormat::Csv => parse_csv(file)?,
        DescriptorFormat::Lcdf => {
            let mut bytes = Vec::new();
            std::io::BufReader::new(file)
                .read_to_end(&mut bytes)
                .map_err(|e| Error::io(path, e))?;
            parse_lcdf(&bytes)?
        }
    };
    rows.into_iter()
        .map(|v| FeatureVector::normalized(v, "descriptor"))
        .collect()
}

/// Reads raw (un-normalized) CSV records, checking that all share a length.
pub fn parse_csv(reader: impl Read) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (record_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            record: record_idx,
            message: e.to_string(),
        })?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    record: record_idx,
                    message: format!("not a number: {field:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = out.first() {
            if first.len() != row.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        out.push(row);
    }
    Ok(out)
}

pub fn parse_lcdf(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let bad = |message: String| Error::Parse { record: 0, message };
    if bytes.len() < 12 || &bytes[..4] != LCDF_MAGIC {
        return Err(bad("missing LCD1 header".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != count * dim * 8 {
        return Err(bad(format!(
            "expected {count}x{dim} f64 values, found {} bytes",
            body.len()
        )));
    }
    if count > 0 && dim == 0 {
        return Err(bad("zero-dimensional records".into()));
    }
    Ok(body
        .chunks_exact(dim.max(1) * 8)
        .map(|rec| {
            rec.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect())
}

pub fn write_lcdf<V: AsRef<[f64]>>(writer: impl Write, records: &[V]) -> std::io::Result<()> {
    let dim = records.first().map_or(0, |r| r.as_ref().len());
    let mut w = BufWriter::new(writer);
    w.write_all(LCDF_MAGIC)?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    for rec in records {
        let rec = rec.as_ref();
        assert_eq!(rec.len(), dim, "LCDF records must share one dimension");
        for v in rec {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_lcdf<V: AsRef<[f64]>>(path: impl AsRef<Path>, records: &[V]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_lcdf(file, records).map_err(|e| Error::io(path, e))
}

pub fn save_csv<V: AsRef<[f64]>>(path: impl AsRef<Path>, records: &[V]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())?;
    for rec in records {
        w.write_record(rec.as_ref().iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}
