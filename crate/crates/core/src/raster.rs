//! Pixel containers shared across the pipeline.
//!
//! All rasters are row-major with interleaved channels, indexed as
//! `(row, column, channel)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::shape(
                "RasterImage::new",
                &[height, width, channels],
                &[pixels.len()],
            ));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    pixels.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.pixels[i] = value;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = self.index(row, col, 0);
        &self.pixels[i..i + self.channels]
    }

    pub fn require_rgb(&self) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::InvalidImage(format!(
                "expected an RGB image, got {} channel(s)",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn require_single_channel(&self) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::InvalidImage(format!(
                "expected a single-channel image, got {} channels",
                self.channels
            )));
        }
        Ok(())
    }

    /// Checks every value lies in `[lo, hi]`.
    pub fn require_range(&self, lo: f64, hi: f64) -> Result<()> {
        match self.pixels.iter().position(|&v| v < lo || v > hi) {
            Some(i) => Err(Error::OutOfRange(format!(
                "value {} at index {i} outside [{lo}, {hi}]",
                self.pixels[i]
            ))),
            None => Ok(()),
        }
    }

    /// Same pixels transposed-and-flipped by a quarter turn clockwise.
    pub fn rotate90(&self) -> Self {
        let (h, w, ch) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; self.pixels.len()];
        for r in 0..h {
            for c in 0..w {
                // (r, c) moves to (c, h - 1 - r) in a w x h image.
                let dst = (c * h + (h - 1 - r)) * ch;
                let src = (r * w + c) * ch;
                out[dst..dst + ch].copy_from_slice(&self.pixels[src..src + ch]);
            }
        }
        Self {
            height: w,
            width: h,
            channels: ch,
            pixels: out,
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                let src = self.index(r, self.width - 1 - c, 0);
                let dst = self.index(r, c, 0);
                out.pixels[dst..dst + self.channels]
                    .copy_from_slice(&self.pixels[src..src + self.channels]);
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut out = self.clone();
        let row_len = self.width * self.channels;
        for r in 0..self.height {
            let src = (self.height - 1 - r) * row_len;
            out.pixels[r * row_len..(r + 1) * row_len]
                .copy_from_slice(&self.pixels[src..src + row_len]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if bits.len() != height * width {
            return Err(Error::shape("BinaryMask::new", &[height, width], &[bits.len()]));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 1.0 for set pixels, 0.0 otherwise, as a single-channel raster.
    pub fn to_image(&self) -> RasterImage {
        RasterImage {
            height: self.height,
            width: self.width,
            channels: 1,
            pixels: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::OutOfBounds {
                row,
                col,
                height,
                width,
                image_height: self.height,
                image_width: self.width,
            });
        }
        Self::from_fn(height, width, |r, c| self.get(row + r, col + c))
    }

    fn map_image(&self, f: impl Fn(&RasterImage) -> RasterImage) -> Self {
        let img = f(&self.to_image());
        Self {
            height: img.height,
            width: img.width,
            bits: img.pixels.iter().map(|&v| v > 0.5).collect(),
        }
    }

    pub fn rotate90(&self) -> Self {
        self.map_image(RasterImage::rotate90)
    }

    pub fn flip_horizontal(&self) -> Self {
        self.map_image(RasterImage::flip_horizontal)
    }

    pub fn flip_vertical(&self) -> Self {
        self.map_image(RasterImage::flip_vertical)
    }
}

/// A pixel is foreground iff its first-channel intensity is positive.
pub fn mask_from_image(image: &RasterImage) -> BinaryMask {
    let bits = image
        .pixels
        .chunks_exact(image.channels)
        .map(|px| px[0] > 0.0)
        .collect();
    BinaryMask {
        height: image.height,
        width: image.width,
        bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_channel_counts_and_nan() {
        assert!(RasterImage::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(RasterImage::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(RasterImage::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn mask_from_zero_and_full_rasters() {
        let zero = RasterImage::filled(3, 4, 1, 0.0).unwrap();
        assert_eq!(mask_from_image(&zero).count(), 0);
        let full = RasterImage::filled(3, 4, 3, 255.0).unwrap();
        assert_eq!(mask_from_image(&full).count(), 12);
    }

    #[test]
    fn mask_from_single_nonzero_pixel() {
        let img = RasterImage::from_fn(5, 6, 3, |r, c, _| if (r, c) == (2, 4) { 17.0 } else { 0.0 })
            .unwrap();
        let m = mask_from_image(&img);
        assert_eq!(m.count(), 1);
        assert!(m.get(2, 4));
    }

    #[test]
    fn mask_uses_first_channel_only() {
        let img = RasterImage::from_fn(1, 2, 3, |_, c, ch| if c == 0 && ch == 1 { 9.0 } else { 0.0 })
            .unwrap();
        assert_eq!(mask_from_image(&img).count(), 0);
    }

    #[test]
    fn rotate90_moves_corners_clockwise() {
        let img = RasterImage::from_fn(2, 3, 1, |r, c, _| (r * 3 + c) as f64).unwrap();
        let rot = img.rotate90();
        assert_eq!(rot.dims(), (3, 2));
        // top-left goes to top-right
        assert_eq!(rot.get(0, 1, 0), 0.0);
        assert_eq!(rot.get(0, 0, 0), 3.0);
        assert_eq!(rot.rotate90().rotate90().rotate90(), img);
    }

    #[test]
    fn flips_are_involutions() {
        let img = RasterImage::from_fn(3, 4, 3, |r, c, ch| (r * 100 + c * 10 + ch) as f64).unwrap();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_vertical().flip_vertical(), img);
        assert_eq!(img.flip_horizontal().get(0, 0, 2), img.get(0, 3, 2));
        assert_eq!(img.flip_vertical().get(0, 1, 0), img.get(2, 1, 0));
    }
}
