//! Procedural test data: two-stain images with known stain bases, and
//! blob "nuclei" slides with exact masks.

use alloc::vec::Vec;

use crate::error::Result;
use crate::patching::{crop_mask, extract_pair, plan_patch_grid, PatchPair};
use crate::raster::{BinaryMask, RasterImage};
use crate::rng::SeededRng;
use crate::stain::StainBasis;

/// Per-pixel concentrations `s * (w, 1 - w)` with mixing weight `w` uniform in
/// `[0, 1]` and total `s` uniform in `[lo, hi]`.
pub fn mixture_concentrations(n: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let w = rng.uniform();
            let s = rng.uniform_range(lo, hi);
            [s * w, s * (1.0 - w)]
        })
        .collect()
}

/// Tissue-like concentrations: a quarter of the pixels pure hematoxylin
/// (nuclei), a quarter pure eosin (stroma), the rest mixtures as in
/// [`mixture_concentrations`]. The pure populations pin the extreme stain
/// angles, as they do in real H&E slides.
pub fn tissue_concentrations(n: usize, lo: f64, hi: f64, rng: &mut SeededRng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let s = rng.uniform_range(lo, hi);
            match rng.below(4) {
                0 => [s, 0.0],
                1 => [0.0, s],
                _ => {
                    let w = rng.uniform();
                    [s * w, s * (1.0 - w)]
                }
            }
        })
        .collect()
}

/// Renders `OD = basis * c` back to intensities, optionally rounded to
/// 8-bit levels.
pub fn two_stain_image(
    basis: &StainBasis,
    concentrations: &[[f64; 2]],
    height: usize,
    width: usize,
    io_intensity: f64,
    round: bool,
) -> Result<RasterImage> {
    let mut pixels = Vec::with_capacity(height * width * 3);
    for c in concentrations.iter().take(height * width) {
        for od in basis.mix(*c) {
            let v = (io_intensity * libm::pow(10.0, -od)).clamp(0.0, 255.0);
            pixels.push(if round { libm::round(v) } else { v });
        }
    }
    RasterImage::new(height, width, 3, pixels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub patch_size: usize,
    pub margin: usize,
    /// Slides are `tiles x tiles` patches.
    pub tiles: usize,
    pub blobs_per_slide: usize,
    pub radius: (f64, f64),
    pub noise_std: f64,
    /// Place blob centers on internal patch borders.
    pub straddle_borders: bool,
    pub background: [f64; 3],
    pub foreground: [f64; 3],
}

impl BlobConfig {
    pub fn new(patch_size: usize, margin: usize) -> Self {
        Self {
            patch_size,
            margin,
            tiles: 2,
            blobs_per_slide: 10,
            radius: (0.06 * patch_size as f64, 0.14 * patch_size as f64),
            noise_std: 8.0,
            straddle_borders: false,
            background: [232.0, 190.0, 215.0],
            foreground: [95.0, 70.0, 150.0],
        }
    }

    pub fn slide_size(&self) -> usize {
        self.tiles * self.patch_size
    }
}

/// One slide of filled circles on a noisy background, with its exact mask.
pub fn blob_slide(cfg: &BlobConfig, rng: &mut SeededRng) -> Result<(RasterImage, BinaryMask)> {
    let size = cfg.slide_size();
    let blobs: Vec<(f64, f64, f64)> = (0..cfg.blobs_per_slide)
        .map(|_| {
            let r = rng.uniform_range(cfg.radius.0, cfg.radius.1);
            let (cy, cx) = if cfg.straddle_borders && cfg.tiles > 1 {
                // Center within a few pixels of an internal border line.
                let line = (1 + rng.below(cfg.tiles as u64 - 1) as usize) * cfg.patch_size;
                let jitter = rng.uniform_range(-0.5 * r, 0.5 * r);
                let along = rng.uniform_range(r, size as f64 - r);
                if rng.below(2) == 0 {
                    (line as f64 + jitter, along)
                } else {
                    (along, line as f64 + jitter)
                }
            } else {
                (rng.uniform_range(0.0, size as f64), rng.uniform_range(0.0, size as f64))
            };
            (cy, cx, r)
        })
        .collect();
    let inside = |row: usize, col: usize| {
        let (y, x) = (row as f64 + 0.5, col as f64 + 0.5);
        blobs
            .iter()
            .any(|&(cy, cx, r)| (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
    };
    let mask = BinaryMask::from_fn(size, size, inside)?;
    let mut pixels = Vec::with_capacity(size * size * 3);
    for &fg in mask.bits() {
        let base = if fg { cfg.foreground } else { cfg.background };
        for v in base {
            pixels.push(libm::round((v + cfg.noise_std * rng.normal()).clamp(0.0, 255.0)));
        }
    }
    Ok((RasterImage::new(size, size, 3, pixels)?, mask))
}

/// `n_pairs` training samples cut from as many blob slides as needed.
pub fn blob_dataset(cfg: &BlobConfig, n_pairs: usize, seed: u64) -> Result<Vec<(PatchPair, BinaryMask)>> {
    let mut out = Vec::with_capacity(n_pairs);
    let mut slide = 0u64;
    while out.len() < n_pairs {
        let mut rng = SeededRng::derived(seed, &[slide]);
        let (image, mask) = blob_slide(cfg, &mut rng)?;
        let grid = plan_patch_grid(image.height(), image.width(), cfg.patch_size, cfg.margin)?;
        for &origin in &grid.origins {
            if out.len() == n_pairs {
                break;
            }
            out.push((
                extract_pair(&image, origin, cfg.patch_size, cfg.margin)?,
                crop_mask(&mask, origin, cfg.patch_size)?,
            ));
        }
        slide += 1;
    }
    Ok(out)
}
