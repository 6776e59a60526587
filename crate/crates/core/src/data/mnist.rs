//! IDX files as distributed for MNIST.

use std::path::Path;

use super::{images_from_bytes, DatasetHandle};
use crate::error::{Error, Result};
use crate::networks::IMAGE_SIZE;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data("IDX header truncated".into()))
}

/// Decode an IDX image file into `N x 1 x 32 x 32` bytes, zero-padding smaller
/// images symmetrically. Returns the pixels and N.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<u8>, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let side = IMAGE_SIZE as usize;
    if rows == 0 || cols == 0 || rows > side || cols > side {
        return Err(Error::Data(format!("unsupported IDX image size {rows}x{cols}")));
    }
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "IDX image file has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let (top, left) = ((side - rows) / 2, (side - cols) / 2);
    let mut out = vec![0u8; n * side * side];
    for (i, src) in bytes[16..].chunks_exact(rows * cols).enumerate() {
        let dst = &mut out[i * side * side..(i + 1) * side * side];
        for r in 0..rows {
            let at = (top + r) * side + left;
            dst[at..at + cols].copy_from_slice(&src[r * cols..(r + 1) * cols]);
        }
    }
    Ok((out, n))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::Data(format!(
            "IDX label file has {} bytes, header implies {}",
            bytes.len(),
            8 + n
        )));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

pub fn load_mnist_files(images: &Path, labels: &Path) -> Result<DatasetHandle> {
    let img_bytes = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lbl_bytes = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let (pixels, n) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::Data(format!("{n} images but {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= 10) {
        return Err(Error::Data(format!("MNIST label {bad} out of range")));
    }
    DatasetHandle::new("mnist", images_from_bytes(&pixels, n, 1), Some(labels), Some(10))
}

/// Load `train-images-idx3-ubyte` and `train-labels-idx1-ubyte` from `dir`.
pub fn load_mnist(dir: &Path) -> Result<DatasetHandle> {
    let pick = |names: &[&str]| {
        names
            .iter()
            .map(|n| dir.join(n))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::Data(format!("{} not found in {}", names[0], dir.display())))
    };
    let images = pick(&["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?;
    let labels = pick(&["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?;
    load_mnist_files(&images, &labels)
}
