//! IDX image/label containers (big-endian headers, unsigned byte payloads).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{validation, Error, Result};
use crate::tensor::{Shape3, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return validation(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            ));
        }
        Ok(LabeledDataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Checks every image against `shape` and every label against `class_count`.
    pub fn check_against(&self, shape: Shape3, class_count: usize) -> Result<()> {
        if let Some((i, img)) = self
            .images
            .iter()
            .enumerate()
            .find(|(_, t)| t.shape() != shape)
        {
            return validation(format!(
                "image {i} has shape {} but the model expects {shape}",
                img.shape()
            ));
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= class_count)
        {
            return validation(format!(
                "label {l} of sample {i} is not below class_count {class_count}"
            ));
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    what: &'a str,
}

impl Cursor<'_> {
    fn u32_be(&mut self) -> Result<u32> {
        let (head, rest) = self
            .bytes
            .split_at_checked(4)
            .ok_or_else(|| self.truncated())?;
        self.bytes = rest;
        Ok(u32::from_be_bytes(head.try_into().unwrap()))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let (head, rest) = self
            .bytes
            .split_at_checked(n)
            .ok_or_else(|| self.truncated())?;
        self.bytes = rest;
        Ok(head)
    }

    fn truncated(&self) -> Error {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("{} file is truncated", self.what),
        ))
    }
}

/// Parses an IDX image file into `(1, rows, cols)` tensors.
pub fn parse_idx_images(bytes: &[u8], normalize: bool) -> Result<Vec<Tensor>> {
    let mut cur = Cursor {
        bytes,
        what: "IDX image",
    };
    let magic = cur.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let shape = Shape3::new(1, rows, cols).map_err(|e| Error::Format(e.to_string()))?;
    let payload = cur.take(count * shape.len())?;
    let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
    payload
        .chunks_exact(shape.len())
        .map(|px| Tensor::new(shape, px.iter().map(|&p| p as f32 * scale).collect()))
        .collect()
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = Cursor {
        bytes,
        what: "IDX label",
    };
    let magic = cur.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = cur.u32_be()? as usize;
    Ok(cur.take(count)?.iter().map(|&b| b as usize).collect())
}

/// Loads a paired image/label IDX set. With `normalize`, pixels are scaled by 1/255.
pub fn load_idx_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    normalize: bool,
) -> Result<LabeledDataset> {
    let images = parse_idx_images(&fs::read(images_path)?, normalize)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    LabeledDataset::new(images, labels)
}

pub fn encode_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if let Some(bad) = images.iter().find(|img| img.len() != rows * cols) {
        return validation(format!(
            "image of {} pixels does not match {rows}x{cols}",
            bad.len()
        ));
    }
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for word in [
        IDX_IMAGES_MAGIC,
        images.len() as u32,
        rows as u32,
        cols as u32,
    ] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_dataset(
    images: &[Vec<u8>],
    rows: usize,
    cols: usize,
    labels: &[u8],
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(images_path)?);
    w.write_all(&encode_idx_images(images, rows, cols)?)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(labels_path)?);
    w.write_all(&encode_idx_labels(labels))?;
    w.flush()?;
    Ok(())
}
