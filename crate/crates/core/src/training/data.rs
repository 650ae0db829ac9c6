//! Dataset ingestion and patch extraction.

use std::path::Path;

use crate::codec::{read_pgm, Image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PATCH_SIZE: usize = 40;
pub const PATCH_STRIDE: usize = 20;
/// 4 rotations x {no flip, horizontal flip}.
pub const AUGMENTATIONS: usize = 8;

/// Where a patch came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub image_id: usize,
    pub x: usize,
    pub y: usize,
    pub augment_id: u8,
}

/// A batch of training patches in [0,1] with their provenance.
#[derive(Debug)]
pub struct PatchSet {
    pub patches: Tensor,
    pub provenance: Vec<Provenance>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }
}

/// Loads every `.pgm` in the directory, sorted by filename.
pub fn load_images(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Ingest {
            path: dir.to_path_buf(),
            msg: e.to_string(),
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("pgm"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| read_pgm(p)).collect()
}

/// Patch grid positions along one axis: 0, 20, 40, ... while a full patch
/// still fits.
fn axis_positions(len: usize) -> usize {
    if len < PATCH_SIZE {
        0
    } else {
        (len - PATCH_SIZE) / PATCH_STRIDE + 1
    }
}

/// Patch count for one image, before augmentation.
pub fn patch_positions(width: usize, height: usize) -> usize {
    axis_positions(width) * axis_positions(height)
}

/// Total patch count for a set of image dimensions — the pure arithmetic,
/// no pixel data involved.
pub fn count_patches(dims: &[(usize, usize)], augment: bool) -> usize {
    let per_pos = if augment { AUGMENTATIONS } else { 1 };
    dims.iter()
        .map(|&(w, h)| patch_positions(w, h) * per_pos)
        .sum()
}

/// Extracts 40x40 patches on a stride-20 grid, optionally with all eight
/// rotation/flip augmentations. Images smaller than a patch are skipped
/// with a warning on stderr.
pub fn extract_patches(images: &[Image], augment: bool) -> Result<PatchSet> {
    let channels = match images.first() {
        Some(img) => img.channels(),
        None => 1,
    };
    if images.iter().any(|i| i.channels() != channels) {
        return Err(Error::shape("images have mixed channel counts".to_string()));
    }
    let per_pos = if augment { AUGMENTATIONS } else { 1 };
    let total: usize = images
        .iter()
        .map(|i| patch_positions(i.width(), i.height()) * per_pos)
        .sum();
    let plane = PATCH_SIZE * PATCH_SIZE;
    let mut data = vec![0.0f64; total * channels * plane];
    let mut provenance = Vec::with_capacity(total);
    let mut out_idx = 0;
    for (image_id, img) in images.iter().enumerate() {
        if img.width() < PATCH_SIZE || img.height() < PATCH_SIZE {
            eprintln!(
                "warning: image {image_id} ({}x{}) is smaller than a {PATCH_SIZE}x{PATCH_SIZE} patch; skipped",
                img.width(),
                img.height()
            );
            continue;
        }
        for yi in 0..axis_positions(img.height()) {
            for xi in 0..axis_positions(img.width()) {
                let (x0, y0) = (xi * PATCH_STRIDE, yi * PATCH_STRIDE);
                for aug in 0..per_pos as u8 {
                    let dst = &mut data[out_idx * channels * plane..(out_idx + 1) * channels * plane];
                    for c in 0..channels {
                        copy_patch(img, c, x0, y0, aug, &mut dst[c * plane..(c + 1) * plane]);
                    }
                    provenance.push(Provenance {
                        image_id,
                        x: x0,
                        y: y0,
                        augment_id: aug,
                    });
                    out_idx += 1;
                }
            }
        }
    }
    data.truncate(out_idx * channels * plane);
    let patches = Tensor::from_vec(out_idx, channels, PATCH_SIZE, PATCH_SIZE, data)?;
    Ok(PatchSet {
        patches,
        provenance,
    })
}

/// Copies one augmented patch plane, scaled to [0,1]. Augment ids 0..4 are
/// rotations by 0/90/180/270 degrees; 4..8 add a horizontal flip first.
fn copy_patch(img: &Image, c: usize, x0: usize, y0: usize, aug: u8, dst: &mut [f64]) {
    let n = PATCH_SIZE;
    for dy in 0..n {
        for dx in 0..n {
            // source coordinate within the patch before augmentation
            let (mut px, py);
            let rot = aug % 4;
            let flip = aug >= 4;
            let (ry, rx) = match rot {
                0 => (dy, dx),
                1 => (n - 1 - dx, dy),          // rotate 90 degrees cw
                2 => (n - 1 - dy, n - 1 - dx),  // 180
                _ => (dx, n - 1 - dy),          // 270
            };
            px = rx;
            py = ry;
            if flip {
                px = n - 1 - px;
            }
            dst[dy * n + dx] = img.at(c, y0 + py, x0 + px) as f64 / 255.0;
        }
    }
}
