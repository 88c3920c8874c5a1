//! IDX binary format (MNIST / FashionMNIST distribution files).
//!
//! Images: big-endian magic `0x00000803`, then u32 count, rows, cols, then
//! `count * rows * cols` unsigned bytes. Labels: magic `0x00000801`, u32 count,
//! then `count` bytes. Pixels are scaled to [0, 1] by dividing by 255.

use std::fs;
use std::path::Path;

use super::{Dataset, ImageShape, Sample};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| Error::Parse {
            offset: self.pos,
            reason: format!("truncated while reading {what}"),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn payload(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                reason: format!("truncated {what}: expected {len} bytes, found {available}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                reason: format!("{} trailing bytes after {what}", self.bytes.len() - self.pos),
            });
        }
        Ok(out)
    }
}

fn expect_magic(r: &mut Reader<'_>, magic: u32, what: &str) -> Result<()> {
    let found = r.u32("magic")?;
    if found != magic {
        return Err(Error::Parse {
            offset: 0,
            reason: format!("bad {what} magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    Ok(())
}

/// Parsed image file: (count, rows, cols, raw bytes).
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let mut r = Reader { bytes, pos: 0 };
    expect_magic(&mut r, IMAGES_MAGIC, "image")?;
    let n = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let payload = r.payload(n * rows * cols, "image payload")?;
    Ok((n, rows, cols, payload))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut r = Reader { bytes, pos: 0 };
    expect_magic(&mut r, LABELS_MAGIC, "label")?;
    let n = r.u32("label count")? as usize;
    r.payload(n, "label payload")
}

/// Build a dataset from in-memory IDX image and label files.
pub fn decode(name: &str, split: &str, images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(Error::Parse {
            offset: 4,
            reason: format!("image count {n} does not match label count {}", labels.len()),
        });
    }
    let shape = ImageShape::new(cols, rows, 1)?;
    let d = shape.dim();
    let class_count = labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(1);
    let samples = pixels
        .chunks_exact(d.max(1))
        .zip(labels)
        .enumerate()
        .map(|(id, (px, &label))| Sample {
            id,
            pixels: px.iter().map(|&b| f64::from(b) / 255.0).collect(),
            label: label as usize,
        })
        .collect();
    Dataset::new(name, split, shape, class_count, samples)
}

pub fn load_idx(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    name: &str,
    split: &str,
) -> Result<Dataset> {
    let images = images.as_ref();
    let labels = labels.as_ref();
    let img = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    decode(name, split, &img, &lab)
}

/// Quantize pixels back to bytes (round(p * 255), clamped).
fn to_byte(p: f64) -> u8 {
    (p * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn encode(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if dataset.shape.channels != 1 {
        return Err(Error::Shape(
            "IDX image files hold single-channel images only".into(),
        ));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.len() * dataset.dim());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&n.to_be_bytes());
    images.extend_from_slice(&(dataset.shape.height as u32).to_be_bytes());
    images.extend_from_slice(&(dataset.shape.width as u32).to_be_bytes());
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for s in &dataset.samples {
        images.extend(s.pixels.iter().map(|&p| to_byte(p)));
        let label = u8::try_from(s.label)
            .map_err(|_| Error::Config(format!("label {} does not fit a byte", s.label)))?;
        labels.push(label);
    }
    Ok((images, labels))
}

pub fn write_idx(
    dataset: &Dataset,
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<()> {
    let (img, lab) = encode(dataset)?;
    fs::write(images.as_ref(), img).map_err(|e| Error::io(images.as_ref(), e))?;
    fs::write(labels.as_ref(), lab).map_err(|e| Error::io(labels.as_ref(), e))?;
    Ok(())
}
