//! Does the global view help at patch borders?
//!
//! Two models with identical initialization are fit to the same blob slides,
//! whose blobs are centered on internal patch borders. One sees both views;
//! the other has its global input replaced by black pixels. Both are then
//! scored on the pixels within `band` of an internal border line.

use histoseg_core::evaluation::{binarize, Confusion};
use histoseg_core::patching::{extract_pairs, plan_patch_grid, stitch_predictions};
use histoseg_core::rng::SeededRng;
use histoseg_core::synthetic::{blob_slide, BlobConfig};
use histoseg_core::training::train;
use histoseg_core::{
    build_model, BinaryMask, Model, ModelConfig, PatchPair, RasterImage, Result, TrainConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub slides: usize,
    /// Half-width, in pixels, of the scored strip around each border line.
    pub band: usize,
    pub data_seed: u64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                patch_size: 32,
                margin: 8,
                levels: 2,
                base_channels: 8,
                seed: 0,
            },
            train: TrainConfig {
                epochs: 60,
                ..TrainConfig::default()
            },
            slides: 2,
            band: 4,
            data_seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationResult {
    pub dual_band_dice: f64,
    pub local_band_dice: f64,
    pub dual_train_dice: f64,
    pub local_train_dice: f64,
}

fn without_global(pair: &PatchPair) -> PatchPair {
    let g = pair.global_raw.height();
    PatchPair {
        local: pair.local.clone(),
        global_raw: RasterImage::filled(g, g, 3, 0.0).expect("non-empty"),
        origin: pair.origin,
    }
}

/// Pixels within `band` of a multiple of `patch_size` (excluding the image
/// edges) along either axis.
pub fn border_band(height: usize, width: usize, patch_size: usize, band: usize) -> BinaryMask {
    let near = |x: usize, extent: usize| {
        (1..extent.div_ceil(patch_size)).any(|k| {
            let line = k * patch_size;
            x + band >= line && x < line + band
        })
    };
    BinaryMask::from_fn(height, width, |r, c| near(r, height) || near(c, width)).expect("non-empty")
}

fn segment(model: &Model, image: &RasterImage, local_only: bool) -> Result<RasterImage> {
    let cfg = model.config();
    let grid = plan_patch_grid(image.height(), image.width(), cfg.patch_size, cfg.margin)?;
    let maps = extract_pairs(image, &grid)?
        .iter()
        .map(|p| {
            if local_only {
                model.predict_patch(&without_global(p))
            } else {
                model.predict_patch(p)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    stitch_predictions(&grid, &maps)
}

fn band_dice(
    model: &Model,
    slides: &[(RasterImage, BinaryMask)],
    band: &BinaryMask,
    threshold: f64,
    local_only: bool,
) -> Result<f64> {
    let mut total = Confusion::default();
    for (image, gt) in slides {
        let seg = binarize(&segment(model, image, local_only)?, threshold)?;
        let keep = |m: &BinaryMask| {
            BinaryMask::from_fn(m.height(), m.width(), |r, c| band.get(r, c) && m.get(r, c))
        };
        let c = Confusion::between(&keep(gt)?, &keep(&seg)?)?;
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
    }
    Ok(total.dice())
}

pub fn border_band_ablation(cfg: &AblationConfig) -> Result<AblationResult> {
    let blobs = BlobConfig {
        straddle_borders: true,
        ..BlobConfig::new(cfg.model.patch_size, cfg.model.margin)
    };
    let slides: Vec<(RasterImage, BinaryMask)> = (0..cfg.slides as u64)
        .map(|i| blob_slide(&blobs, &mut SeededRng::derived(cfg.data_seed, &[i])))
        .collect::<Result<_>>()?;
    let mut dual_data = Vec::new();
    for (image, mask) in &slides {
        let grid = plan_patch_grid(image.height(), image.width(), blobs.patch_size, blobs.margin)?;
        for pair in extract_pairs(image, &grid)? {
            let m = mask.crop(pair.origin.0, pair.origin.1, blobs.patch_size, blobs.patch_size)?;
            dual_data.push((pair, m));
        }
    }
    let local_data: Vec<_> = dual_data.iter().map(|(p, m)| (without_global(p), m.clone())).collect();

    let (dual, dual_hist) = train(build_model(&cfg.model)?, &dual_data, &cfg.train)?;
    let (local, local_hist) = train(build_model(&cfg.model)?, &local_data, &cfg.train)?;

    let size = blobs.slide_size();
    let band = border_band(size, size, blobs.patch_size, cfg.band);
    let t = cfg.train.threshold;
    Ok(AblationResult {
        dual_band_dice: band_dice(&dual, &slides, &band, t, false)?,
        local_band_dice: band_dice(&local, &slides, &band, t, true)?,
        dual_train_dice: dual_hist.mean_dice.last().copied().unwrap_or(f64::NAN),
        local_train_dice: local_hist.mean_dice.last().copied().unwrap_or(f64::NAN),
    })
}
