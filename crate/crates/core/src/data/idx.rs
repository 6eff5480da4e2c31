use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn header(bytes: &[u8], words: usize) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::IdxTruncated {
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    Ok(bytes[..4 * words]
        .chunks(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::IdxBadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    let expected = offset + len;
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[offset..expected])
}

/// Decodes an unsigned-byte image file into `n×1×rows×cols` in [−1, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    check_magic(header(bytes, 1)?[0], IMAGE_MAGIC)?;
    let h = header(bytes, 4)?;
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let px = payload(bytes, 16, n * rows * cols)?;
    Tensor::new(
        &[n, 1, rows, cols],
        px.iter().map(|&p| p as f64 / 127.5 - 1.0).collect(),
    )
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(header(bytes, 1)?[0], LABEL_MAGIC)?;
    let n = header(bytes, 2)?[1] as usize;
    Ok(payload(bytes, 8, n)?.iter().map(|&l| l as usize).collect())
}

/// Reads an image file and its label file, enforcing equal counts.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(Tensor, Vec<usize>)> {
    let x = parse_idx_images(&std::fs::read(images)?)?;
    let y = parse_idx_labels(&std::fs::read(labels)?)?;
    if x.dims()[0] != y.len() {
        return Err(Error::IdxCountMismatch {
            images: x.dims()[0],
            labels: y.len(),
        });
    }
    Ok((x, y))
}

/// Encodes `n×1×rows×cols` samples in [−1, 1] as an image file.
pub fn idx_image_bytes(x: &Tensor) -> Result<Vec<u8>> {
    let &[n, 1, rows, cols] = x.dims() else {
        return Err(Error::InvalidShape(format!(
            "IDX images must be n×1×h×w, got {}",
            x.shape()
        )));
    };
    let mut out = Vec::with_capacity(16 + x.numel());
    for word in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend(word.to_be_bytes());
    }
    out.extend(
        x.data()
            .iter()
            .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

pub fn idx_label_bytes(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABEL_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::LabelOutOfRange { label: l, classes: 256 })?);
    }
    Ok(out)
}
