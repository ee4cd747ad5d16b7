//! Big-endian IDX files as distributed with MNIST and Fashion-MNIST.
//!
//! Only the two layouts used by those datasets are supported: unsigned-byte
//! images (`0x00000803`, dims `n x rows x cols`) and unsigned-byte labels
//! (`0x00000801`, dim `n`).

use std::fs;
use std::path::Path;

use ufl_core::data::Dataset;

use crate::{Result, SimError};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard file names inside an FMNIST directory.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `n * rows * cols` raw bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

fn be_u32(bytes: &[u8], offset: usize, field: &'static str) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(SimError::Idx {
            field,
            offset,
            reason: format!("file ends after {} bytes", bytes.len()),
        }),
    }
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != want {
        return Err(SimError::Idx {
            field: "magic",
            offset: 0,
            reason: format!("expected {want:#010x}, found {magic:#010x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let have = bytes.len() - header;
    if have < len {
        return Err(SimError::Idx {
            field: "data",
            offset: bytes.len(),
            reason: format!("truncated: header promises {len} data bytes, found {have}"),
        });
    }
    if have > len {
        return Err(SimError::Idx {
            field: "data",
            offset: header + len,
            reason: format!("{} trailing bytes after the data", have - len),
        });
    }
    Ok(&bytes[header..])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(SimError::Idx {
            field: if rows == 0 { "row count" } else { "column count" },
            offset: if rows == 0 { 8 } else { 12 },
            reason: "image dimensions must be positive".into(),
        });
    }
    let data = payload(bytes, 16, n * rows * cols)?;
    Ok(IdxImages {
        rows,
        cols,
        pixels: data.to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4, "label count")? as usize;
    Ok(payload(bytes, 8, n)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.len() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| SimError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| SimError::io(path, e))
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    parse_images(&read(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&read(path)?)
}

pub fn write_images(path: &Path, images: &IdxImages) -> Result<()> {
    write(path, &encode_images(images))
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    write(path, &encode_labels(labels))
}

/// Joins an image and a label file into a dataset with pixels scaled to [0, 1].
pub fn to_dataset(images: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if images.len() != labels.len() {
        return Err(SimError::Idx {
            field: "label count",
            offset: 4,
            reason: format!("{} labels for {} images", labels.len(), images.len()),
        });
    }
    let features = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(Dataset::new(images.rows * images.cols, features, labels.to_vec())?)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    to_dataset(&read_images(images_path)?, &read_labels(labels_path)?)
}

/// Loads the FMNIST training files from `dir`.
pub fn load_fmnist(dir: &Path) -> Result<Dataset> {
    load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> IdxImages {
        IdxImages {
            rows: 2,
            cols: 2,
            pixels: vec![0, 255, 17, 128, 255, 0, 0, 1],
        }
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let img = fixture();
        let bytes = encode_images(&img);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(parse_images(&bytes).unwrap(), img);
        assert_eq!(encode_images(&parse_images(&bytes).unwrap()), bytes);
        let lb = encode_labels(&[3, 9]);
        assert_eq!(encode_labels(&parse_labels(&lb).unwrap()), lb);
    }

    #[test]
    fn pixels_scale_to_unit_interval() {
        let ds = to_dataset(&fixture(), &[3, 9]).unwrap();
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.row(0), &[0.0, 1.0, 17.0 / 255.0, 128.0 / 255.0]);
        assert_eq!(ds.labels(), &[3, 9]);
    }

    #[test]
    fn wrong_magic_is_reported_at_offset_zero() {
        let bytes = encode_images(&fixture());
        match parse_labels(&bytes) {
            Err(SimError::Idx { field, offset, .. }) => assert_eq!((field, offset), ("magic", 0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_names_the_field() {
        let bytes = encode_images(&fixture());
        assert!(matches!(parse_images(&bytes[..10]), Err(SimError::Idx { field: "row count", offset: 8, .. })));
        assert!(matches!(parse_images(&bytes[..20]), Err(SimError::Idx { field: "data", .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(parse_images(&long), Err(SimError::Idx { field: "data", offset: 24, .. })));
    }

    #[test]
    fn count_mismatch_between_files() {
        assert!(matches!(to_dataset(&fixture(), &[1]), Err(SimError::Idx { field: "label count", .. })));
    }
}
