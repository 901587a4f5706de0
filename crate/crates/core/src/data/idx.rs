//! Big-endian IDX files as used by MNIST.

use std::path::Path;

use crate::data::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an image file.
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

fn header(bytes: &[u8], path: &Path, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let truncated = || Error::format(path, format!("truncated header: {} bytes", bytes.len()));
    if bytes.len() < 4 {
        return Err(truncated());
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let found = word(0);
    if found != magic {
        return Err(Error::format(
            path,
            format!("bad magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    if bytes.len() < 4 + 4 * dims {
        return Err(truncated());
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let dims = header(bytes, path, IMAGES_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let body = &bytes[16..];
    let expected = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    if body.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} pixel bytes for {n}x{rows}x{cols}, found {}", body.len()),
        ));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let n = header(bytes, path, LABELS_MAGIC, 1)?[0];
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(
            path,
            format!("expected {n} label bytes, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for w in [IMAGES_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
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
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label file pair. Samples have shape `[1, rows, cols]`
/// with pixels scaled by 1/255; classes are the digits `0..=max label`.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<LabeledDataset> {
    let images = parse_images(&read(images_path)?, images_path)?;
    let labels = parse_labels(&read(labels_path)?, labels_path)?;
    if images.count() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} holds {} images but {} holds {} labels",
            images_path.display(),
            images.count(),
            labels_path.display(),
            labels.len()
        )));
    }
    from_raw(&images, &labels, split)
}

pub fn from_raw(images: &IdxImages, labels: &[u8], split: Split) -> Result<LabeledDataset> {
    let size = images.rows * images.cols;
    let samples = images
        .pixels
        .chunks_exact(size.max(1))
        .take(labels.len())
        .map(|px| {
            let data = px.iter().map(|&b| b as f64 / 255.0).collect();
            Tensor::new(vec![1, images.rows, images.cols], data)
        })
        .collect::<Result<Vec<_>>>()?;
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let names = (0..n_classes).map(|c| c.to_string()).collect();
    LabeledDataset::new(samples, labels.iter().map(|&l| l as usize).collect(), names, split)
}

/// Inverse of [`from_raw`] for datasets whose pixels are multiples of 1/255.
pub fn to_raw(ds: &LabeledDataset) -> Result<(IdxImages, Vec<u8>)> {
    let shape = ds.sample_shape().unwrap_or(&[1, 0, 0]);
    let (rows, cols) = match *shape {
        [1, r, c] | [r, c] => (r, c),
        _ => return Err(Error::contract(format!("idx needs single-channel images, got {shape:?}"))),
    };
    let mut pixels = Vec::with_capacity(ds.len() * rows * cols);
    for s in ds.samples() {
        pixels.extend(s.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut labels = Vec::with_capacity(ds.len());
    for (&l, name) in ds.labels().iter().map(|l| (l, &ds.class_names()[*l])) {
        let digit: u8 = name
            .parse()
            .map_err(|_| Error::contract(format!("class {name:?} (label {l}) is not a byte label")))?;
        labels.push(digit);
    }
    Ok((IdxImages { rows, cols, pixels }, labels))
}
