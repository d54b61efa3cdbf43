//! IDX image/label files (the MNIST container format).
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for 3-D unsigned-byte
//! image stacks, `0x00000801` for 1-D label vectors), one big-endian `u32`
//! per dimension, then the unsigned-byte payload.

use std::path::Path;

use ndarray::Array2;

use crate::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Images with their original class labels. Pixel features are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    /// `(rows, cols)` of each image.
    pub image_shape: (usize, usize),
}

impl LabeledPool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Sorted distinct class ids.
    pub fn classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&c| seen[c as usize]).collect()
    }
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::format(
                self.path,
                self.bytes.len() as u64,
                format!("file truncated while reading {what}"),
            )
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        if self.bytes.is_empty() {
            return Err(Error::format(self.path, 0, "empty file"));
        }
        let m = self.u32("magic number")?;
        if m != expected {
            return Err(Error::format(
                self.path,
                0,
                format!("bad magic number {m:#010x}, expected {expected:#010x}"),
            ));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if self.bytes.len() < end {
            return Err(Error::format(
                self.path,
                self.bytes.len() as u64,
                format!(
                    "payload truncated: expected {len} bytes from offset {}",
                    self.pos
                ),
            ));
        }
        if self.bytes.len() > end {
            return Err(Error::format(
                self.path,
                end as u64,
                "trailing bytes after payload",
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Raw image stack: `(count, rows, cols, pixels)`.
pub fn read_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.magic(IMAGES_MAGIC)?;
    let n = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let pixels = r.payload(n * rows * cols)?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.magic(LABELS_MAGIC)?;
    let n = r.u32("label count")? as usize;
    Ok(r.payload(n)?.to_vec())
}

/// Loads an image file and its label file, scaling pixels by `1/255`.
pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<LabeledPool> {
    let (n, rows, cols, pixels) = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::format(
            labels_path,
            4,
            format!(
                "label count {} does not match image count {n}",
                labels.len()
            ),
        ));
    }
    let features = Array2::from_shape_vec(
        (n, rows * cols),
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .expect("payload length checked against header");
    Ok(LabeledPool {
        features,
        labels,
        image_shape: (rows, cols),
    })
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len() % (rows * cols).max(1), 0);
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
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
