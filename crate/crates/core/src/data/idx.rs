//! IDX (MNIST-style) image and label files.
//!
//! Layout, all integers big-endian u32:
//!
//! - images: magic `0x00000803`, count, rows, cols, then `count*rows*cols` u8 pixels
//! - labels: magic `0x00000801`, count, then `count` u8 labels

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what} header")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "image file")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            what: "image file",
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4, "image file")? as usize;
    let rows = read_u32(bytes, 8, "image file")? as usize;
    let cols = read_u32(bytes, 12, "image file")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidSpec(format!("image size {rows}x{cols}")));
    }
    let len = count
        .checked_mul(rows * cols)
        .ok_or_else(|| Error::InvalidSpec("image count overflows".into()))?;
    let payload = &bytes[16..];
    if payload.len() < len {
        return Err(Error::Truncated(format!(
            "image file: expected {len} pixel bytes, found {}",
            payload.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: payload[..len].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "label file")?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            what: "label file",
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(bytes, 4, "label file")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Truncated(format!(
            "label file: expected {count} labels, found {}",
            payload.len()
        )));
    }
    Ok(payload[..count].to_vec())
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Pairs parsed images with labels. Samples have shape `(1, rows, cols)`,
/// pixels scaled to `[0, 1]`; the class count is `max(label) + 1`, at least 2.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let images = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if images.count() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(2);
    let features = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Dataset::new(
        vec![1, images.rows, images.cols],
        features,
        labels.iter().map(|&l| l as usize).collect(),
        num_classes,
    )
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    dataset_from_idx(&images, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture() {
        let pixels = [0u8, 255, 51, 0, 10, 20, 30, 40];
        let d = dataset_from_idx(&encode_images(2, 2, &pixels), &encode_labels(&[3, 1])).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.sample_shape(), &[1, 2, 2]);
        assert_eq!(d.sample(0), &[0.0, 1.0, 0.2, 0.0]);
        assert_eq!(d.labels(), &[3, 1]);
        assert_eq!(d.num_classes(), 4);
    }

    #[test]
    fn wrong_label_magic() {
        let mut labels = encode_labels(&[1]);
        labels[3] = 0x03;
        let err = dataset_from_idx(&encode_images(1, 1, &[0]), &labels).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_and_mismatched_files() {
        let mut images = encode_images(2, 2, &[0; 8]);
        images.truncate(20);
        assert!(matches!(parse_images(&images), Err(Error::Truncated(_))));
        assert!(matches!(parse_labels(&[0, 0, 8]), Err(Error::Truncated(_))));
        let err = dataset_from_idx(&encode_images(2, 2, &[0; 8]), &encode_labels(&[1])).unwrap_err();
        assert!(matches!(err, Error::CountMismatch { images: 2, labels: 1 }));
    }
}
