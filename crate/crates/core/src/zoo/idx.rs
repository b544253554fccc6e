//! IDX files (the MNIST container format). All header integers are
//! big-endian `u32`.

use std::fs;
use std::path::Path;

use super::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an image file into `N×1×H×W` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "images: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let h = read_u32(bytes, 8, "images")? as usize;
    let w = read_u32(bytes, 12, "images")? as usize;
    let body = &bytes[16..];
    let expected = n * h * w;
    if body.len() < expected {
        return Err(Error::Format(format!(
            "images: truncated, expected {expected} pixel bytes, found {}",
            body.len()
        )));
    }
    let data = body[..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![n, 1, h, w], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "labels: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format(format!(
            "labels: truncated, expected {n} bytes, found {}",
            body.len()
        )));
    }
    Ok(body[..n].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label file pair. The class count is one more than the
/// largest label present.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            images.shape()[0],
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(images, labels, classes, Provenance::IdxFile)
}
