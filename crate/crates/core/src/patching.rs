//! Whole-slide tiling into local patches with zero-padded global context, and
//! the inverse stitching of per-patch probability maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RasterImage};

pub const DEFAULT_PATCH_SIZE: usize = 256;
pub const DEFAULT_MARGIN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub margin: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Top-left `(row, col)` corners, row-major.
    pub origins: Vec<(usize, usize)>,
}

impl PatchGrid {
    pub fn global_size(&self) -> usize {
        self.patch_size + 2 * self.margin
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Checks the structural invariants of a grid read from elsewhere.
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0
            || self.patch_size > self.image_height
            || self.patch_size > self.image_width
        {
            return Err(Error::InvalidConfig(format!(
                "patch size {} does not fit a {}x{} image",
                self.patch_size, self.image_height, self.image_width
            )));
        }
        for &(r, c) in &self.origins {
            if r + self.patch_size > self.image_height || c + self.patch_size > self.image_width {
                return Err(Error::OutOfBounds {
                    row: r,
                    col: c,
                    height: self.patch_size,
                    width: self.patch_size,
                    image_height: self.image_height,
                    image_width: self.image_width,
                });
            }
        }
        Ok(())
    }
}

/// A local patch together with its context-extended global view.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub local: RasterImage,
    pub global_raw: RasterImage,
    pub origin: (usize, usize),
}

impl PatchPair {
    pub fn margin(&self) -> usize {
        (self.global_raw.height() - self.local.height()) / 2
    }
}

fn axis_origins(dim: usize, patch_size: usize) -> Vec<usize> {
    let last = dim - patch_size;
    let mut out: Vec<usize> = (0..dim).step_by(patch_size).map(|o| o.min(last)).collect();
    out.dedup();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Stride equals the patch size; the final origin on each axis is pulled back
/// to `dim - patch_size`, so slides that are not a multiple of the patch size
/// get one overlap band instead of a partial tile.
pub fn plan_patch_grid(
    image_height: usize,
    image_width: usize,
    patch_size: usize,
    margin: usize,
) -> Result<PatchGrid> {
    if patch_size == 0 || patch_size > image_height || patch_size > image_width {
        return Err(Error::InvalidConfig(format!(
            "patch size {patch_size} does not fit a {image_height}x{image_width} image"
        )));
    }
    let rows = axis_origins(image_height, patch_size);
    let cols = axis_origins(image_width, patch_size);
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(PatchGrid {
        patch_size,
        margin,
        image_height,
        image_width,
        origins,
    })
}

pub fn extract_local_patch(
    image: &RasterImage,
    origin: (usize, usize),
    patch_size: usize,
) -> Result<RasterImage> {
    let (r0, c0) = origin;
    if patch_size == 0 || r0 + patch_size > image.height() || c0 + patch_size > image.width() {
        return Err(Error::OutOfBounds {
            row: r0,
            col: c0,
            height: patch_size,
            width: patch_size,
            image_height: image.height(),
            image_width: image.width(),
        });
    }
    let ch = image.channels();
    let mut pixels = Vec::with_capacity(patch_size * patch_size * ch);
    for r in r0..r0 + patch_size {
        let start = image.index(r, c0, 0);
        pixels.extend_from_slice(&image.pixels()[start..start + patch_size * ch]);
    }
    RasterImage::new(patch_size, patch_size, ch, pixels)
}

/// The local rectangle grown by `margin` on every side; pixels falling outside
/// the slide are zero in every channel.
pub fn extract_global_patch(
    image: &RasterImage,
    origin: (usize, usize),
    patch_size: usize,
    margin: usize,
) -> Result<RasterImage> {
    let (r0, c0) = origin;
    if patch_size == 0 || r0 + patch_size > image.height() || c0 + patch_size > image.width() {
        return Err(Error::OutOfBounds {
            row: r0,
            col: c0,
            height: patch_size,
            width: patch_size,
            image_height: image.height(),
            image_width: image.width(),
        });
    }
    let size = patch_size + 2 * margin;
    let ch = image.channels();
    let mut pixels = vec![0.0; size * size * ch];
    // Source rows/cols are r0 - margin + i; intersect with the slide.
    let src_r = r0 as isize - margin as isize;
    let src_c = c0 as isize - margin as isize;
    let col_lo = (-src_c).max(0) as usize;
    let col_hi = ((image.width() as isize - src_c).min(size as isize)) as usize;
    for i in 0..size {
        let r = src_r + i as isize;
        if r < 0 || r >= image.height() as isize {
            continue;
        }
        let src = image.index(r as usize, (src_c + col_lo as isize) as usize, 0);
        let n = (col_hi - col_lo) * ch;
        let dst = (i * size + col_lo) * ch;
        pixels[dst..dst + n].copy_from_slice(&image.pixels()[src..src + n]);
    }
    RasterImage::new(size, size, ch, pixels)
}

pub fn extract_pair(
    image: &RasterImage,
    origin: (usize, usize),
    patch_size: usize,
    margin: usize,
) -> Result<PatchPair> {
    Ok(PatchPair {
        local: extract_local_patch(image, origin, patch_size)?,
        global_raw: extract_global_patch(image, origin, patch_size, margin)?,
        origin,
    })
}

/// Every pair of a grid, in grid order.
pub fn extract_pairs(image: &RasterImage, grid: &PatchGrid) -> Result<Vec<PatchPair>> {
    grid.origins
        .iter()
        .map(|&o| extract_pair(image, o, grid.patch_size, grid.margin))
        .collect()
}

pub fn crop_mask(mask: &BinaryMask, origin: (usize, usize), patch_size: usize) -> Result<BinaryMask> {
    mask.crop(origin.0, origin.1, patch_size, patch_size)
}

/// Center crop of a square raster.
pub fn center_crop(image: &RasterImage, size: usize) -> Result<RasterImage> {
    if size > image.height() || size > image.width() {
        return Err(Error::shape(
            "center_crop",
            &[size, size],
            &[image.height(), image.width()],
        ));
    }
    let off = ((image.height() - size) / 2, (image.width() - size) / 2);
    extract_local_patch(image, off, size)
}

/// Averages overlapping patch maps into a whole-slide probability map.
///
/// Accumulation runs in grid order with integer coverage counts, so the
/// result is independent of how the patch maps were produced.
pub fn stitch_predictions(grid: &PatchGrid, patch_maps: &[RasterImage]) -> Result<RasterImage> {
    if patch_maps.len() != grid.origins.len() {
        return Err(Error::shape(
            "stitch_predictions",
            &[grid.origins.len()],
            &[patch_maps.len()],
        ));
    }
    grid.validate()?;
    let (h, w, p) = (grid.image_height, grid.image_width, grid.patch_size);
    // Mean as `first + sum(v - first) / n`: overlapping identical values
    // reproduce themselves exactly.
    let mut first = vec![0.0; h * w];
    let mut deviation = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for (map, &(r0, c0)) in patch_maps.iter().zip(&grid.origins) {
        if map.dims() != (p, p) || map.channels() != 1 {
            return Err(Error::shape(
                "stitch_predictions",
                &[p, p, 1],
                &[map.height(), map.width(), map.channels()],
            ));
        }
        map.require_range(0.0, 1.0)?;
        for r in 0..p {
            for c in 0..p {
                let i = (r0 + r) * w + c0 + c;
                let v = map.get(r, c, 0);
                if count[i] == 0 {
                    first[i] = v;
                } else {
                    deviation[i] += v - first[i];
                }
                count[i] += 1;
            }
        }
    }
    if count.iter().any(|&n| n == 0) {
        return Err(Error::InvalidConfig("grid does not cover the image".into()));
    }
    let pixels = first
        .iter()
        .zip(&deviation)
        .zip(&count)
        .map(|((&f, &d), &n)| (f + d / f64::from(n)).clamp(0.0, 1.0))
        .collect();
    RasterImage::new(h, w, 1, pixels)
}

/// Source coordinate for destination index `dst` under half-pixel alignment.
fn source_coord(dst: usize, src_dim: usize, dst_dim: usize) -> (usize, usize, f64) {
    let x = (dst as f64 + 0.5) * (src_dim as f64 / dst_dim as f64) - 0.5;
    let x = x.clamp(0.0, (src_dim - 1) as f64);
    let lo = libm::floor(x) as usize;
    let hi = (lo + 1).min(src_dim - 1);
    (lo, hi, x - lo as f64)
}

/// Bilinear resampling of an interleaved `h x w x ch` buffer.
pub(crate) fn resize_bilinear_raw(
    src: &[f64],
    h: usize,
    w: usize,
    ch: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let cols: Vec<_> = (0..out_w).map(|x| source_coord(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * ch);
    for y in 0..out_h {
        let (r0, r1, fy) = source_coord(y, h, out_h);
        for &(c0, c1, fx) in &cols {
            for k in 0..ch {
                let at = |r: usize, c: usize| src[(r * w + c) * ch + k];
                let top = at(r0, c0) + (at(r0, c1) - at(r0, c0)) * fx;
                let bottom = at(r1, c0) + (at(r1, c1) - at(r1, c0)) * fx;
                out.push(top + (bottom - top) * fy);
            }
        }
    }
    out
}

pub fn resize_bilinear(image: &RasterImage, out_height: usize, out_width: usize) -> Result<RasterImage> {
    if out_height == 0 || out_width == 0 {
        return Err(Error::InvalidConfig(format!(
            "output size must be positive, got {out_height}x{out_width}"
        )));
    }
    let pixels = resize_bilinear_raw(
        image.pixels(),
        image.height(),
        image.width(),
        image.channels(),
        out_height,
        out_width,
    );
    RasterImage::new(out_height, out_width, image.channels(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, ch: usize) -> RasterImage {
        RasterImage::from_fn(h, w, ch, |r, c, k| (r * 1000 + c * 3 + k) as f64).unwrap()
    }

    #[test]
    fn grid_for_thousand_pixel_slide() {
        let g = plan_patch_grid(1000, 1000, 256, 64).unwrap();
        let rows: Vec<usize> = g.origins.iter().filter(|o| o.1 == 0).map(|o| o.0).collect();
        assert_eq!(rows, [0, 256, 512, 744]);
        assert_eq!(g.len(), 16);
    }

    #[test]
    fn exact_fit_and_exact_tiling() {
        assert_eq!(plan_patch_grid(256, 256, 256, 64).unwrap().origins, [(0, 0)]);
        let g = plan_patch_grid(512, 512, 256, 64).unwrap();
        assert_eq!(g.origins, [(0, 0), (0, 256), (256, 0), (256, 256)]);
    }

    #[test]
    fn oversized_patch_rejected() {
        assert!(plan_patch_grid(100, 300, 256, 64).is_err());
        assert!(plan_patch_grid(300, 300, 0, 64).is_err());
    }

    #[test]
    fn rectangular_slides_plan_each_axis() {
        let g = plan_patch_grid(300, 600, 256, 0).unwrap();
        assert_eq!(g.origins, [(0, 0), (0, 256), (0, 344), (44, 0), (44, 256), (44, 344)]);
    }

    #[test]
    fn local_extraction_copies_rectangle() {
        let img = ramp(6, 7, 3);
        let p = extract_local_patch(&img, (0, 0), 3).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(p.pixel(r, c), img.pixel(r, c));
            }
        }
        assert_eq!(extract_local_patch(&ramp(5, 5, 1), (0, 0), 5).unwrap(), ramp(5, 5, 1));
        assert!(extract_local_patch(&img, (4, 0), 3).is_err());
    }

    #[test]
    fn global_patch_at_corner_is_zero_padded() {
        let img = RasterImage::filled(40, 40, 3, 200.0).unwrap();
        let g = extract_global_patch(&img, (0, 0), 16, 8).unwrap();
        assert_eq!(g.dims(), (32, 32));
        for r in 0..32 {
            for c in 0..32 {
                let padded = r < 8 || c < 8;
                for k in 0..3 {
                    assert_eq!(g.get(r, c, k), if padded { 0.0 } else { 200.0 });
                }
            }
        }
    }

    #[test]
    fn global_patch_larger_than_slide_on_both_sides() {
        let img = ramp(4, 4, 1);
        let g = extract_global_patch(&img, (0, 0), 4, 3).unwrap();
        assert_eq!(center_crop(&g, 4).unwrap(), img);
        assert_eq!(g.get(0, 0, 0), 0.0);
        assert_eq!(g.get(9, 9, 0), 0.0);
    }

    #[test]
    fn stitch_single_patch_is_identity() {
        let g = plan_patch_grid(8, 8, 8, 2).unwrap();
        let m = RasterImage::from_fn(8, 8, 1, |r, c, _| ((r + c) % 3) as f64 / 2.0).unwrap();
        assert_eq!(stitch_predictions(&g, &[m.clone()]).unwrap(), m);
    }

    #[test]
    fn stitch_rejects_wrong_counts_and_shapes() {
        let g = plan_patch_grid(10, 10, 8, 2).unwrap();
        let m = RasterImage::filled(8, 8, 1, 0.5).unwrap();
        assert!(stitch_predictions(&g, &[m.clone()]).is_err());
        let bad = RasterImage::filled(7, 7, 1, 0.5).unwrap();
        assert!(stitch_predictions(&g, &[m.clone(), m.clone(), m.clone(), bad]).is_err());
        let out_of_range = RasterImage::filled(8, 8, 1, 1.5).unwrap();
        assert!(stitch_predictions(&g, &[m.clone(), m.clone(), m, out_of_range]).is_err());
    }

    #[test]
    fn stitch_averages_constant_maps_exactly() {
        let g = plan_patch_grid(20, 20, 8, 2).unwrap();
        let maps = vec![RasterImage::filled(8, 8, 1, 0.7).unwrap(); g.len()];
        let s = stitch_predictions(&g, &maps).unwrap();
        assert!(s.pixels().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn resize_two_by_two_to_one() {
        let img = RasterImage::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let out = resize_bilinear(&img, 1, 1).unwrap();
        assert_eq!(out.pixels(), &[0.5]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp(5, 6, 3);
        assert_eq!(resize_bilinear(&img, 5, 6).unwrap(), img);
        let k = RasterImage::filled(7, 9, 3, 0.25).unwrap();
        for (h, w) in [(3, 3), (14, 18), (1, 20)] {
            let r = resize_bilinear(&k, h, w).unwrap();
            assert!(r.pixels().iter().all(|&v| v == 0.25));
        }
        assert!(resize_bilinear(&img, 0, 3).is_err());
    }
}
