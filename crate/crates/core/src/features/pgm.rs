//! Binary netpbm reader: `P5` graymaps and `P6` pixmaps with `maxval <= 255`.
//!
//! Color pixmaps are converted to gray by averaging the three channels.

use std::path::Path;

use crate::error::{Error, Result};

use super::GrayImage;

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(header_err("truncated header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| header_err("non-ASCII header"))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| header_err(&format!("bad {what} {tok:?}")))
    }
}

fn header_err(message: &str) -> Error {
    Error::Parse {
        record: 0,
        message: message.to_string(),
    }
}

/// Decodes an in-memory `P5`/`P6` image.
pub fn decode_pnm(bytes: &[u8]) -> Result<GrayImage> {
    let mut hdr = HeaderReader { bytes, pos: 0 };
    let channels = match hdr.token()? {
        "P5" => 1,
        "P6" => 3,
        other => return Err(header_err(&format!("unsupported magic {other:?}"))),
    };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(header_err(&format!("maxval {maxval} not in 1..=255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = hdr.pos + 1;
    let needed = width * height * channels;
    let raster = bytes
        .get(start..start + needed)
        .ok_or_else(|| header_err(&format!("raster needs {needed} bytes")))?;
    let scale = maxval as f64;
    let pixels = raster
        .chunks_exact(channels)
        .map(|px| {
            let sum: u32 = px.iter().map(|&b| b as u32).sum();
            (sum as f64 / channels as f64 / scale).min(1.0)
        })
        .collect();
    GrayImage::new(height, width, pixels)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}
