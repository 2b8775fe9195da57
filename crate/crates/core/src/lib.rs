//! Numeric core for dual-view nuclei segmentation of H&E whole-slide images.
//!
//! Slides are stain-normalized, tiled into local patches that each carry a
//! zero-padded context window, segmented by a small encoder-decoder that sees
//! both views, stitched back together and scored with Dice.
//!
//! The crate is `no_std` and needs only `alloc`; file formats, PNG IO and the
//! command line live in the `histoseg` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod evaluation;
mod linalg;
pub mod model;
pub mod patching;
pub mod raster;
pub mod rng;
pub mod stain;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{build_model, Model, ModelConfig};
pub use patching::{PatchGrid, PatchPair};
pub use raster::{mask_from_image, BinaryMask, RasterImage};
pub use rng::SeededRng;
pub use stain::{StainBasis, StainParams, StainProfile};
pub use tensor::Tensor;
pub use training::{TrainConfig, TrainingHistory};
