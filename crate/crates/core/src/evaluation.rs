//! Pixel-level scoring: thresholding, confusion counts and Dice.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::patching::{extract_pairs, plan_patch_grid, stitch_predictions};
use crate::raster::{BinaryMask, RasterImage};
use crate::stain::{normalize_to_target, StainParams, StainProfile};

/// Foreground iff `prob > threshold`.
pub fn binarize(probs: &RasterImage, threshold: f64) -> Result<BinaryMask> {
    probs.require_single_channel()?;
    probs.require_range(0.0, 1.0)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    let bits = probs.pixels().iter().map(|&p| p > threshold).collect();
    BinaryMask::new(probs.height(), probs.width(), bits)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub(crate) fn from_bits(gt: &[bool], seg: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&g, &s) in gt.iter().zip(seg) {
            match (g, s) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn between(gt: &BinaryMask, seg: &BinaryMask) -> Result<Self> {
        if gt.dims() != seg.dims() {
            return Err(Error::shape(
                "mask comparison",
                &[gt.height(), gt.width()],
                &[seg.height(), seg.width()],
            ));
        }
        Ok(Self::from_bits(gt.bits(), seg.bits()))
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2|G n S| / (|G| + |S|)`; 1 when both sets are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn dice_coefficient(gt: &BinaryMask, seg: &BinaryMask) -> Result<f64> {
    Ok(Confusion::between(gt, seg)?.dice())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub dice: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, c: Confusion) -> Self {
        Self {
            id: id.into(),
            dice: c.dice(),
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageRecord>,
    pub mean_dice: f64,
}

impl EvalReport {
    /// Unweighted mean of per-image Dice, records kept in the given order.
    pub fn from_records(images: Vec<ImageRecord>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidConfig("evaluation needs at least one image".into()));
        }
        let mean_dice = images.iter().map(|r| r.dice).sum::<f64>() / images.len() as f64;
        Ok(Self { images, mean_dice })
    }
}

/// Tiles a (normalized) slide, predicts every patch and stitches the result.
pub fn segment_slide(
    model: &Model,
    image: &RasterImage,
    patch_size: usize,
    margin: usize,
) -> Result<RasterImage> {
    let grid = plan_patch_grid(image.height(), image.width(), patch_size, margin)
        .map_err(|e| e.in_stage("plan_grid"))?;
    let pairs = extract_pairs(image, &grid).map_err(|e| e.in_stage("extract"))?;
    let maps = pairs
        .iter()
        .map(|p| model.predict_patch(p))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("predict"))?;
    stitch_predictions(&grid, &maps).map_err(|e| e.in_stage("stitch"))
}

/// Scores a probability map against ground truth.
pub fn score_prediction(
    id: &str,
    probs: &RasterImage,
    gt: &BinaryMask,
    threshold: f64,
) -> Result<(ImageRecord, BinaryMask)> {
    let seg = binarize(probs, threshold).map_err(|e| e.in_stage("binarize"))?;
    let c = Confusion::between(gt, &seg).map_err(|e| e.in_stage("dice"))?;
    Ok((ImageRecord::new(id, c), seg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideEvaluation {
    pub record: ImageRecord,
    pub probabilities: RasterImage,
    pub mask: BinaryMask,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_image(
    id: &str,
    model: &Model,
    image: &RasterImage,
    gt: &BinaryMask,
    profile: &StainProfile,
    params: &StainParams,
    patch_size: usize,
    margin: usize,
    threshold: f64,
) -> Result<SlideEvaluation> {
    if image.dims() != gt.dims() {
        return Err(Error::shape(
            "evaluate_image",
            &[image.height(), image.width()],
            &[gt.height(), gt.width()],
        ));
    }
    let normalized =
        normalize_to_target(image, profile, params).map_err(|e| e.in_stage("normalize"))?;
    let probabilities = segment_slide(model, &normalized, patch_size, margin)?;
    let (record, mask) = score_prediction(id, &probabilities, gt, threshold)?;
    Ok(SlideEvaluation {
        record,
        probabilities,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn mask3(bits: [u8; 9]) -> BinaryMask {
        BinaryMask::new(3, 3, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn binarize_examples() {
        let p = RasterImage::filled(2, 2, 1, 0.7).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().count(), 4);
        let half = RasterImage::filled(1, 1, 1, 0.5).unwrap();
        assert_eq!(binarize(&half, 0.5).unwrap().count(), 0);
        let m = mask3([1, 0, 1, 0, 0, 1, 1, 1, 0]);
        assert_eq!(binarize(&m.to_image(), 0.5).unwrap(), m);
    }

    #[test]
    fn binarize_rejects_out_of_range_and_rgb() {
        let p = RasterImage::new(1, 2, 1, vec![0.2, 1.2]).unwrap();
        assert!(binarize(&p, 0.5).is_err());
        let rgb = RasterImage::filled(1, 1, 3, 0.2).unwrap();
        assert!(binarize(&rgb, 0.5).is_err());
        assert!(binarize(&RasterImage::filled(1, 1, 1, 0.2).unwrap(), 1.0).is_err());
    }

    #[test]
    fn dice_examples() {
        let a = mask3([1, 1, 0, 0, 1, 0, 0, 0, 0]);
        assert_eq!(dice_coefficient(&a, &a).unwrap(), 1.0);
        let b = mask3([0, 0, 1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(dice_coefficient(&a, &b).unwrap(), 0.0);
        // |G| = 4, |S| = 2, |G n S| = 2
        let g = mask3([1, 1, 0, 1, 1, 0, 0, 0, 0]);
        let s = mask3([1, 1, 0, 0, 0, 0, 0, 0, 0]);
        assert!((dice_coefficient(&g, &s).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_conventions() {
        let e = mask3([0; 9]);
        assert_eq!(dice_coefficient(&e, &e).unwrap(), 1.0);
        assert_eq!(dice_coefficient(&e, &mask3([1, 0, 0, 0, 0, 0, 0, 0, 0])).unwrap(), 0.0);
    }

    #[test]
    fn dice_rejects_mismatched_dims() {
        let a = BinaryMask::empty(2, 3).unwrap();
        let b = BinaryMask::empty(3, 2).unwrap();
        assert!(dice_coefficient(&a, &b).is_err());
    }

    #[test]
    fn confusion_counts_sum_to_pixels() {
        let g = mask3([1, 1, 0, 1, 1, 0, 0, 0, 0]);
        let s = mask3([1, 0, 1, 0, 0, 0, 0, 1, 1]);
        let c = Confusion::between(&g, &s).unwrap();
        assert_eq!(c.total(), 9);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (1, 3, 3, 2));
    }

    #[test]
    fn report_mean_and_empty() {
        let recs = vec![
            ImageRecord { id: "a".into(), dice: 0.5, tp: 0, fp: 0, fn_: 0, tn: 0 },
            ImageRecord { id: "b".into(), dice: 1.0, tp: 0, fp: 0, fn_: 0, tn: 0 },
        ];
        assert_eq!(EvalReport::from_records(recs).unwrap().mean_dice, 0.75);
        assert!(EvalReport::from_records(vec![]).is_err());
    }

    #[test]
    fn ground_truth_as_prediction_scores_one() {
        let gt = mask3([0, 1, 1, 0, 1, 0, 0, 0, 1]);
        let (rec, seg) = score_prediction("x", &gt.to_image(), &gt, 0.5).unwrap();
        assert_eq!(rec.dice, 1.0);
        assert_eq!(seg, gt);
        let zero = RasterImage::filled(3, 3, 1, 0.0).unwrap();
        assert_eq!(score_prediction("x", &zero, &gt, 0.5).unwrap().0.dice, 0.0);
    }
}
