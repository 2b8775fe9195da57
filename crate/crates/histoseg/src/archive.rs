//! Patch archives: one directory per image holding `grid.json` and, for each
//! patch origin `(row, col)` in pixels, `r{row}_c{col}_local.png`,
//! `r{row}_c{col}_global.png` and `r{row}_c{col}_mask.png`.

use std::path::{Path, PathBuf};

use histoseg_core::patching::{crop_mask, extract_pairs};
use histoseg_core::{mask_from_image, BinaryMask, PatchGrid, PatchPair, RasterImage};

use crate::error::{CoreContext, Error, Result};
use crate::formats::{load_grid, save_grid};
use crate::png_io::{load_png, save_mask, save_png};

pub fn patch_path(dir: &Path, origin: (usize, usize), kind: &str) -> PathBuf {
    dir.join(format!("r{}_c{}_{kind}.png", origin.0, origin.1))
}

pub fn grid_path(dir: &Path) -> PathBuf {
    dir.join("grid.json")
}

/// Cuts `image` and `mask` along `grid` and writes the archive, replacing
/// whatever the directory held before.
pub fn write_archive(dir: &Path, image: &RasterImage, mask: &BinaryMask, grid: &PatchGrid) -> Result<usize> {
    if image.dims() != mask.dims() {
        return Err(Error::Core {
            context: dir.display().to_string(),
            source: histoseg_core::Error::ShapeMismatch {
                context: "image and mask",
                expected: vec![image.height(), image.width()],
                found: vec![mask.height(), mask.width()],
            },
        });
    }
    let pairs = extract_pairs(image, grid).context(|| dir.display().to_string())?;
    match std::fs::remove_dir_all(dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(Error::io(dir, e)),
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for pair in &pairs {
        let m = crop_mask(mask, pair.origin, grid.patch_size).context(|| dir.display().to_string())?;
        save_png(&pair.local, &patch_path(dir, pair.origin, "local"))?;
        save_png(&pair.global_raw, &patch_path(dir, pair.origin, "global"))?;
        save_mask(&m, &patch_path(dir, pair.origin, "mask"))?;
    }
    save_grid(grid, &grid_path(dir))?;
    Ok(pairs.len())
}

pub fn read_archive(dir: &Path) -> Result<(PatchGrid, Vec<(PatchPair, BinaryMask)>)> {
    let grid = load_grid(&grid_path(dir))?;
    let (p, g) = (grid.patch_size, grid.global_size());
    let mut samples = Vec::with_capacity(grid.len());
    for &origin in &grid.origins {
        let local_path = patch_path(dir, origin, "local");
        let global_path = patch_path(dir, origin, "global");
        let mask_path = patch_path(dir, origin, "mask");
        let local = load_png(&local_path)?;
        let global_raw = load_png(&global_path)?;
        let mask = mask_from_image(&load_png(&mask_path)?);
        for (path, dims, want) in [
            (&local_path, local.dims(), p),
            (&global_path, global_raw.dims(), g),
            (&mask_path, mask.dims(), p),
        ] {
            if dims != (want, want) {
                return Err(Error::format(
                    path,
                    format!("expected {want}x{want} pixels, found {}x{}", dims.0, dims.1),
                ));
            }
        }
        samples.push((
            PatchPair {
                local,
                global_raw,
                origin,
            },
            mask,
        ));
    }
    Ok((grid, samples))
}
