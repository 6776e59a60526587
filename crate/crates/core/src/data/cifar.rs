//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixels.

use std::path::{Path, PathBuf};

use super::{images_from_bytes, DatasetHandle};
use crate::error::{Error, Result};

pub const CIFAR_RECORD_BYTES: usize = 3073;

/// Returns channel-planar pixels and labels.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<u8>, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::Data(format!(
            "CIFAR-10 batch of {} bytes is not a whole number of {CIFAR_RECORD_BYTES}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for record in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        if record[0] >= 10 {
            return Err(Error::Data(format!("CIFAR-10 label {} out of range", record[0])));
        }
        labels.push(record[0] as usize);
        pixels.extend_from_slice(&record[1..]);
    }
    Ok((pixels, labels))
}

/// Load one batch file, or every `data_batch_*.bin` in a directory in name order.
pub fn load_cifar10(path: &Path) -> Result<DatasetHandle> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
            })
            .collect();
        found.sort();
        found
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::Data(format!("no data_batch_*.bin in {}", path.display())));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for file in &files {
        let bytes = std::fs::read(file).map_err(|e| Error::io(file, e))?;
        let (p, l) = parse_cifar10(&bytes)
            .map_err(|e| Error::Data(format!("{}: {e}", file.display())))?;
        pixels.extend(p);
        labels.extend(l);
    }
    let n = labels.len();
    DatasetHandle::new("cifar10", images_from_bytes(&pixels, n, 3), Some(labels), Some(10))
}
