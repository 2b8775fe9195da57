//! Dice and Jaccard against brute-force set enumeration.

use std::collections::HashSet;

use histoseg_core::evaluation::{binarize, dice_coefficient};
use histoseg_core::raster::{BinaryMask, RasterImage};
use histoseg_core::rng::SeededRng;
use histoseg_core::tensor::Tensor;
use histoseg_core::training::{hard_jaccard_distance, jaccard_distance_loss};

fn random_mask(h: usize, w: usize, density: f64, rng: &mut SeededRng) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.uniform() < density).unwrap()
}

fn pixel_set(m: &BinaryMask) -> HashSet<(usize, usize)> {
    let mut s = HashSet::new();
    for r in 0..m.height() {
        for c in 0..m.width() {
            if m.get(r, c) {
                s.insert((r, c));
            }
        }
    }
    s
}

/// Random mask pairs up to 16x16, including empty and full masks.
fn pairs(n: usize, seed: u64) -> Vec<(BinaryMask, BinaryMask)> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| {
            let h = 1 + rng.below(16) as usize;
            let w = 1 + rng.below(16) as usize;
            let da = [0.0, 0.05, 0.3, 0.5, 0.9, 1.0][rng.below(6) as usize];
            let db = [0.0, 0.05, 0.3, 0.5, 0.9, 1.0][rng.below(6) as usize];
            (random_mask(h, w, da, &mut rng), random_mask(h, w, db, &mut rng))
        })
        .collect()
}

#[test]
fn dice_and_jaccard_match_set_enumeration() {
    for (g, s) in pairs(1000, 1) {
        let (gs, ss) = (pixel_set(&g), pixel_set(&s));
        let inter = gs.intersection(&ss).count();
        let union = gs.union(&ss).count();
        let dice = if gs.len() + ss.len() == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (gs.len() + ss.len()) as f64
        };
        let jac = if union == 0 {
            0.0
        } else {
            (union - inter) as f64 / union as f64
        };
        assert_eq!(dice_coefficient(&g, &s).unwrap(), dice);
        assert_eq!(hard_jaccard_distance(&g, &s).unwrap(), jac);
    }
}

#[test]
fn dice_jaccard_identity() {
    for (g, s) in pairs(1000, 2) {
        let d = hard_jaccard_distance(&g, &s).unwrap();
        let dice = dice_coefficient(&g, &s).unwrap();
        assert!((dice - 2.0 * (1.0 - d) / (2.0 - d)).abs() < 1e-12);
    }
}

#[test]
fn dice_is_symmetric_and_bounded() {
    for (g, s) in pairs(500, 3) {
        let a = dice_coefficient(&g, &s).unwrap();
        assert_eq!(a, dice_coefficient(&s, &g).unwrap());
        assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn jaccard_examples() {
    let m = |bits: [u8; 4]| BinaryMask::new(2, 2, bits.iter().map(|&b| b == 1).collect()).unwrap();
    assert_eq!(hard_jaccard_distance(&m([1, 1, 0, 0]), &m([1, 1, 0, 0])).unwrap(), 0.0);
    assert_eq!(hard_jaccard_distance(&m([1, 0, 0, 0]), &m([0, 0, 0, 1])).unwrap(), 1.0);
    // union 4, intersection 2
    assert_eq!(hard_jaccard_distance(&m([1, 1, 1, 0]), &m([1, 1, 0, 1])).unwrap(), 0.5);
    assert_eq!(hard_jaccard_distance(&m([0; 4]), &m([0; 4])).unwrap(), 0.0);
}

#[test]
fn soft_loss_reduces_to_hard_distance_on_binary_input() {
    for (g, s) in pairs(500, 4) {
        if g.count() + s.count() == 0 {
            continue;
        }
        let as_tensor = |m: &BinaryMask| {
            Tensor::new(
                vec![m.height(), m.width()],
                m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap()
        };
        let (soft, _) = jaccard_distance_loss(&as_tensor(&s), &as_tensor(&g), 0.0).unwrap();
        assert_eq!(soft, hard_jaccard_distance(&g, &s).unwrap());
    }
}

#[test]
fn raising_the_threshold_never_adds_pixels() {
    let mut rng = SeededRng::new(5);
    for _ in 0..100 {
        let probs = RasterImage::from_fn(12, 12, 1, |_, _, _| rng.uniform()).unwrap();
        let mut t: Vec<f64> = (0..6).map(|_| rng.uniform_range(0.01, 0.99)).collect();
        t.sort_by(f64::total_cmp);
        let masks: Vec<BinaryMask> = t.iter().map(|&x| binarize(&probs, x).unwrap()).collect();
        for pair in masks.windows(2) {
            for (hi, lo) in pair[1].bits().iter().zip(pair[0].bits()) {
                assert!(!hi || *lo);
            }
        }
    }
}
