//! Big-endian IDX files as distributed with MNIST.
//!
//! Images: magic `0x00000803`, then `u32` count, rows, cols, then `count ·
//! rows · cols` unsigned bytes. Labels: magic `0x00000801`, `u32` count, then
//! `count` bytes. Pixels are scaled to `[0, 1]` by `/255`.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, DatasetMeta};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len().saturating_sub(self.offset);
        if available < n {
            return Err(Error::parse(
                self.offset,
                format!("truncated {what}: need {n} bytes, {available} available"),
            ));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic number")?;
        if found != expected {
            return Err(Error::parse(
                0,
                format!("bad magic 0x{found:08x}, expected 0x{expected:08x}"),
            ));
        }
        Ok(())
    }
}

/// Returns the `(N, rows·cols)` pixel matrix and `(rows, cols)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Array2<f64>, (usize, usize))> {
    let mut r = Reader { bytes, offset: 0 };
    r.magic(IMAGES_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let pixels = r.take(count * rows * cols, "pixel data")?;
    if r.offset != bytes.len() {
        return Err(Error::parse(
            r.offset,
            format!("{} trailing bytes after pixel data", bytes.len() - r.offset),
        ));
    }
    let items = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .expect("length checked");
    Ok((items, (rows, cols)))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { bytes, offset: 0 };
    r.magic(LABELS_MAGIC)?;
    let count = r.u32("label count")? as usize;
    let labels = r.take(count, "label data")?.to_vec();
    if r.offset != bytes.len() {
        return Err(Error::parse(
            r.offset,
            format!("{} trailing bytes after label data", bytes.len() - r.offset),
        ));
    }
    Ok(labels)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let (items, shape) = parse_idx_images(&read(images)?).map_err(|e| annotate(e, images))?;
    let labels = match labels {
        Some(path) => {
            let labels = parse_idx_labels(&read(path)?).map_err(|e| annotate(e, path))?;
            if labels.len() != items.nrows() {
                return Err(Error::parse(
                    4,
                    format!(
                        "{} declares {} labels but {} declares {} images",
                        path.display(),
                        labels.len(),
                        images.display(),
                        items.nrows()
                    ),
                ));
            }
            Some(labels)
        }
        None => None,
    };
    Dataset::new(
        items,
        labels,
        DatasetMeta {
            source: images.display().to_string(),
            image_shape: Some(shape),
            preprocessing: vec!["scale(1/255)".into()],
        },
    )
}

fn annotate(err: Error, path: &Path) -> Error {
    match err {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

/// Serializes pixels as `round(255·x)`; values outside `[0, 1]` are clamped.
pub fn write_idx_images(dataset: &Dataset) -> Result<Vec<u8>> {
    let (rows, cols) = dataset
        .meta
        .image_shape
        .ok_or_else(|| Error::Parameter("dataset has no image shape".into()))?;
    if rows * cols != dataset.dim() {
        return Err(Error::Parameter(format!(
            "image shape {rows}x{cols} does not match row length {}",
            dataset.dim()
        )));
    }
    let mut out = Vec::with_capacity(16 + dataset.items.len());
    for v in [IMAGES_MAGIC, dataset.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(
        dataset
            .items
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
