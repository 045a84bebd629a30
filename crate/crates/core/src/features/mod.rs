//! Image representations: every frame becomes a unit vector in `R^n`.
//!
//! Raw images are block-averaged down to a small grid and normalized;
//! precomputed descriptors are read from disk and normalized on load.
//! Several representations of the same frame can be stacked into one
//! multi-modal vector.

pub mod descriptors;
pub mod pgm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use descriptors::{load_descriptors, save_lcdf, DescriptorFormat};
pub use pgm::read_pnm;

/// Tolerance on `‖v‖₂ − 1` accepted for a vector declared to be unit.
pub const UNIT_TOL: f64 = 1e-9;

/// A grayscale image with intensities scaled to `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::BadDimensions(format!(
                "image must be non-empty, got {rows}x{cols}"
            )));
        }
        if pixels.len() != rows * cols {
            return Err(Error::BadDimensions(format!(
                "{rows}x{cols} image needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::BadDimensions(format!(
                "pixel intensity {p} outside [0, 1]"
            )));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.cols + c]
    }
}

/// A unit-ℓ2-norm feature vector `f(i)` describing one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    source_tag: String,
}

impl FeatureVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(mut values: Vec<f64>, source_tag: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = linalg::norm2(&values);
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self {
            values,
            source_tag: source_tag.into(),
        })
    }

    /// Wraps values that are already unit length, rejecting anything else.
    pub fn from_unit(values: Vec<f64>, source_tag: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let norm = linalg::norm2(&values);
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::BadDimensions(format!(
                "expected a unit vector, norm is {norm}"
            )));
        }
        Ok(Self {
            values,
            source_tag: source_tag.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Floor-partitioned block boundaries mapping `src` cells onto `dst` blocks.
fn block_bounds(src: usize, dst: usize, k: usize) -> (usize, usize) {
    (k * src / dst, (k + 1) * src / dst)
}

/// Block-averages `img` down to `target_rows × target_cols` and returns the
/// row-major vectorization normalized to unit length.
pub fn image_to_feature(
    img: &GrayImage,
    target_rows: usize,
    target_cols: usize,
) -> Result<FeatureVector> {
    if target_rows == 0 || target_cols == 0 {
        return Err(Error::BadDimensions("target size must be positive".into()));
    }
    if target_rows > img.rows || target_cols > img.cols {
        return Err(Error::BadDimensions(format!(
            "cannot down-sample {}x{} to {target_rows}x{target_cols}",
            img.rows, img.cols
        )));
    }
    let mut values = Vec::with_capacity(target_rows * target_cols);
    for tr in 0..target_rows {
        let (r0, r1) = block_bounds(img.rows, target_rows, tr);
        for tc in 0..target_cols {
            let (c0, c1) = block_bounds(img.cols, target_cols, tc);
            let mut sum = 0.0;
            for r in r0..r1 {
                sum += img.pixels[r * img.cols + c0..r * img.cols + c1]
                    .iter()
                    .sum::<f64>();
            }
            values.push(sum / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    FeatureVector::normalized(values, format!("raw{target_cols}x{target_rows}"))
}

/// Concatenates several unit features of one frame and projects the result
/// back onto the unit sphere.
pub fn stack_features(parts: &[FeatureVector]) -> Result<FeatureVector> {
    match parts {
        [] => Err(Error::EmptyInput),
        [single] => Ok(single.clone()),
        _ => {
            let values: Vec<f64> = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
            FeatureVector::normalized(values, "stacked")
        }
    }
}
