//! MNIST IDX files: big-endian magic, counts and dimensions, then raw bytes.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
const CLASSES: usize = 10;

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Truncated { what })
}

fn check_magic(bytes: &[u8], expected: u32, what: &'static str) -> Result<()> {
    let found = be_u32(bytes, 0, what)?;
    if found != expected {
        return Err(Error::BadMagic { what, expected, found });
    }
    Ok(())
}

/// Parses in-memory image and label files; pixels are divided by 255.
pub fn parse_mnist<S: Scalar>(images: &[u8], labels: &[u8]) -> Result<Dataset<S>> {
    check_magic(images, IMAGE_MAGIC, "image file")?;
    check_magic(labels, LABEL_MAGIC, "label file")?;
    let n_img = be_u32(images, 4, "image file")? as usize;
    let rows = be_u32(images, 8, "image file")? as usize;
    let cols = be_u32(images, 12, "image file")? as usize;
    let n_lab = be_u32(labels, 4, "label file")? as usize;
    if n_img != n_lab {
        return Err(Error::CountMismatch {
            images: n_img,
            labels: n_lab,
        });
    }
    let pixels = images
        .get(16..16 + n_img * rows * cols)
        .ok_or(Error::Truncated { what: "image file" })?;
    let ys = labels
        .get(8..8 + n_lab)
        .ok_or(Error::Truncated { what: "label file" })?;
    let features = pixels.iter().map(|&p| S::from_f64_lossy(p as f64 / 255.0)).collect();
    let mut ds = Dataset::new(
        vec![rows, cols, 1],
        features,
        ys.iter().map(|&y| y as usize).collect(),
        CLASSES,
    )?;
    ds.normalization = "pixel / 255".into();
    Ok(ds)
}

pub fn load_mnist<S: Scalar>(images: &Path, labels: &Path) -> Result<Dataset<S>> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    parse_mnist(&img, &lab)
}
