//! A directory of PNG files. When every image sits in a subdirectory, the sorted
//! subdirectory names become the classes.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::DynamicImage;

use super::{images_from_bytes, DatasetHandle};
use crate::error::{Error, Result};
use crate::networks::IMAGE_SIZE;

fn is_png(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Center-crop to a square, resize bilinearly to 32x32 and return channel-planar bytes.
fn prepare(img: DynamicImage, channels: i64) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let side = w.min(h);
    let square = img.crop_imm((w - side) / 2, (h - side) / 2, side, side);
    let size = IMAGE_SIZE as u32;
    let resized = square.resize_exact(size, size, FilterType::Triangle);
    if channels == 1 {
        resized.to_luma8().into_raw()
    } else {
        let rgb = resized.to_rgb8();
        let plane = (size * size) as usize;
        let mut out = vec![0u8; 3 * plane];
        for (i, px) in rgb.pixels().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c];
            }
        }
        out
    }
}

pub fn load_image_folder(root: &Path, channels: i64) -> Result<DatasetHandle> {
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
    }
    let entries = sorted_entries(root)?;
    let top_files: Vec<PathBuf> = entries.iter().filter(|p| p.is_file() && is_png(p)).cloned().collect();
    let mut class_files: Vec<Vec<PathBuf>> = Vec::new();
    for dir in entries.iter().filter(|p| p.is_dir()) {
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_png(p))
            .collect();
        if !files.is_empty() {
            class_files.push(files);
        }
    }
    let labelled = top_files.is_empty() && !class_files.is_empty();
    let candidates: Vec<(PathBuf, Option<usize>)> = if labelled {
        class_files
            .iter()
            .enumerate()
            .flat_map(|(k, files)| files.iter().map(move |f| (f.clone(), Some(k))))
            .collect()
    } else {
        if !top_files.is_empty() && !class_files.is_empty() {
            log::warn!("{}: images both at top level and in subdirectories; ignoring labels", root.display());
        }
        let mut all: Vec<PathBuf> = top_files.into_iter().chain(class_files.iter().flatten().cloned()).collect();
        all.sort();
        all.into_iter().map(|p| (p, None)).collect()
    };

    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (path, label) in candidates {
        match image::open(&path) {
            Ok(img) => {
                pixels.extend(prepare(img, channels));
                labels.extend(label);
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    let n = pixels.len() / (channels * IMAGE_SIZE * IMAGE_SIZE) as usize;
    if n == 0 {
        return Err(Error::Data(format!("no decodable PNG images under {}", root.display())));
    }
    let images = images_from_bytes(&pixels, n, channels as usize);
    let name = root
        .file_name()
        .map_or_else(|| "folder".to_string(), |s| s.to_string_lossy().into_owned());
    if labelled {
        DatasetHandle::new(name, images, Some(labels), Some(class_files.len()))
    } else {
        DatasetHandle::new(name, images, None, None)
    }
}
