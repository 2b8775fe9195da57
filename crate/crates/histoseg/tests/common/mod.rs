#![allow(dead_code)]

use std::path::{Path, PathBuf};

use histoseg::config::{GridParams, ModelParams};
use histoseg::png_io::{save_mask, save_png};
use histoseg::{Manifest, PipelineConfig, Record, Split};
use histoseg_core::rng::SeededRng;
use histoseg_core::synthetic::{blob_slide, tissue_concentrations, two_stain_image, BlobConfig};
use histoseg_core::{BinaryMask, RasterImage, StainBasis, TrainConfig};

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|x| x / n)
}

pub fn he_basis() -> StainBasis {
    StainBasis::from_columns(unit([0.5626, 0.7201, 0.4062]), unit([0.2159, 0.8012, 0.5581])).unwrap()
}

pub fn other_basis() -> StainBasis {
    StainBasis::from_columns(unit([0.65, 0.70, 0.29]), unit([0.27, 0.75, 0.60])).unwrap()
}

/// A rounded two-stain image with a realistic concentration mix.
pub fn tissue(basis: &StainBasis, side: usize, seed: u64) -> RasterImage {
    let mut rng = SeededRng::new(seed);
    let conc = tissue_concentrations(side * side, 0.8, 1.6, &mut rng);
    two_stain_image(basis, &conc, side, side, 255.0, true).unwrap()
}

pub fn random_mask(h: usize, w: usize, seed: u64) -> BinaryMask {
    let mut rng = SeededRng::new(seed);
    BinaryMask::from_fn(h, w, |_, _| rng.uniform() < 0.3).unwrap()
}

/// A small, fast configuration: 32-pixel patches, 8-pixel margin, a
/// one-level model.
pub fn small_config(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        grid: GridParams {
            patch_size: 32,
            margin: 8,
        },
        model: ModelParams {
            levels: 1,
            base_channels: 2,
            seed: 3,
        },
        train: TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        },
        ..PipelineConfig::new(dir.join("target.png"), dir.join("out"))
    }
}

pub struct Dataset {
    pub config: PipelineConfig,
    pub manifest: Manifest,
}

/// Writes `n_train + n_test` stained tissue images of `side` pixels with
/// random masks, plus a target image, under `dir`.
pub fn write_dataset(dir: &Path, side: usize, n_train: usize, n_test: usize) -> Dataset {
    let config = small_config(dir);
    save_png(&tissue(&he_basis(), side, 1), &config.target_image).unwrap();
    let mut records = Vec::new();
    for i in 0..n_train + n_test {
        let image_path = dir.join(format!("slide{i}.png"));
        let mask_path = dir.join(format!("slide{i}_gt.png"));
        let basis = if i % 2 == 0 { he_basis() } else { other_basis() };
        save_png(&tissue(&basis, side, 10 + i as u64), &image_path).unwrap();
        save_mask(&random_mask(side, side, 20 + i as u64), &mask_path).unwrap();
        let split = if i < n_train { Split::Train } else { Split::Test };
        records.push(Record {
            image_path,
            mask_path,
            split,
        });
    }
    Dataset {
        config,
        manifest: Manifest::new(records).unwrap(),
    }
}

/// Blob slides whose masks match the image content, for training runs.
pub fn write_blob_dataset(dir: &Path, n_train: usize, n_test: usize) -> Dataset {
    let config = small_config(dir);
    let blobs = BlobConfig::new(32, 8);
    let mut rng = SeededRng::new(40);
    let (target, _) = blob_slide(&blobs, &mut rng).unwrap();
    save_png(&target, &config.target_image).unwrap();
    let mut records = Vec::new();
    for i in 0..n_train + n_test {
        let (image, mask) = blob_slide(&blobs, &mut SeededRng::new(50 + i as u64)).unwrap();
        let image_path = dir.join(format!("blob{i}.png"));
        let mask_path = dir.join(format!("blob{i}_gt.png"));
        save_png(&image, &image_path).unwrap();
        save_mask(&mask, &mask_path).unwrap();
        let split = if i < n_train { Split::Train } else { Split::Test };
        records.push(Record {
            image_path,
            mask_path,
            split,
        });
    }
    Dataset {
        config,
        manifest: Manifest::new(records).unwrap(),
    }
}

pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

pub fn max_abs_diff(a: &RasterImage, b: &RasterImage) -> f64 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
