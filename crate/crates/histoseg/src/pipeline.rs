//! The five pipeline commands. They communicate only through files under
//! the configured output directory:
//!
//! ```text
//! profile.json                 target stain profile          (normalize)
//! normalized/<id>.png          stain-normalized slides        (normalize)
//! patches/<id>/                patch archives                 (patchify)
//! model.ckpt, history.csv      trained model and curve        (train)
//! predictions/<id>_{prob,mask}.png                            (predict)
//! evaluation/<id>_{prob,mask}.png, report.json                (evaluate)
//! ```
//!
//! Per-image work runs on a pool of `jobs` threads; results are gathered in
//! manifest order so outputs never depend on the worker count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use histoseg_core::evaluation::{evaluate_image, score_prediction, EvalReport, ImageRecord};
use histoseg_core::patching::plan_patch_grid;
use histoseg_core::stain::{fit_target_profile, normalize_to_target};
use histoseg_core::training::train_with;
use histoseg_core::{build_model, mask_from_image, BinaryMask, Model, RasterImage, StainProfile, TrainingHistory};
use log::{error, info, warn};
use rayon::prelude::*;

use crate::archive::{read_archive, write_archive};
use crate::config::PipelineConfig;
use crate::error::{CoreContext, Error, Result};
use crate::formats::{load_checkpoint, load_profile, save_checkpoint, save_history, save_profile, save_report};
use crate::manifest::{image_id, Manifest, Record, Split};
use crate::png_io::{load_png, save_mask, save_png};

fn run_pool<T: Send>(jobs: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(work))
}

/// Returns the first error in manifest order, or all values.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    Ok(mask_from_image(&load_png(path)?))
}

/// Probabilities in [0, 1] as a grayscale image scaled to [0, 255].
pub fn probability_image(probs: &RasterImage) -> RasterImage {
    RasterImage::from_fn(probs.height(), probs.width(), 1, |r, c, _| {
        (probs.get(r, c, 0) * 255.0).round()
    })
    .expect("scaled probabilities are finite")
}

// ---------------------------------------------------------------------------
// normalize

/// Fits the target profile once, then normalizes every manifest image.
/// Failing images are logged and reported together at the end.
pub fn cmd_normalize(config: &PipelineConfig, manifest: &Manifest, jobs: usize) -> Result<usize> {
    if manifest.is_empty() {
        warn!("manifest is empty; nothing to normalize");
        return Ok(0);
    }
    let target = load_png(&config.target_image)?;
    let profile = fit_target_profile(&target, &config.stain)
        .context(|| format!("target {}", config.target_image.display()))?;
    save_profile(&profile, &config.profile_path())?;
    info!("target profile written to {}", config.profile_path().display());

    let results = run_pool(jobs, || {
        manifest
            .records
            .par_iter()
            .map(|r| normalize_one(config, &profile, r))
            .collect::<Vec<_>>()
    })?;
    let mut failed = 0;
    for (record, result) in manifest.records.iter().zip(&results) {
        if let Err(e) = result {
            error!("{}: {e}", record.id());
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Partial {
            failed,
            total: manifest.len(),
        });
    }
    Ok(manifest.len())
}

fn normalize_one(config: &PipelineConfig, profile: &StainProfile, record: &Record) -> Result<()> {
    let id = record.id();
    let start = Instant::now();
    let image = load_png(&record.image_path)?;
    let out = normalize_to_target(&image, profile, &config.stain).context(|| id.clone())?;
    save_png(&out, &config.normalized_path(&id))?;
    info!("normalized {id} in {:.2?}", start.elapsed());
    Ok(())
}

// ---------------------------------------------------------------------------
// patchify

pub fn cmd_patchify(config: &PipelineConfig, manifest: &Manifest, jobs: usize) -> Result<usize> {
    if manifest.is_empty() {
        warn!("manifest is empty; nothing to patchify");
        return Ok(0);
    }
    let results = run_pool(jobs, || {
        manifest
            .records
            .par_iter()
            .map(|r| patchify_one(config, r))
            .collect::<Vec<_>>()
    })?;
    Ok(first_error(results)?.into_iter().sum())
}

fn patchify_one(config: &PipelineConfig, record: &Record) -> Result<usize> {
    let id = record.id();
    let normalized = config.normalized_path(&id);
    if !normalized.is_file() {
        return Err(Error::NotFound { path: normalized });
    }
    let image = load_png(&normalized)?;
    let mask = load_mask(&record.mask_path)?;
    let grid = plan_patch_grid(image.height(), image.width(), config.grid.patch_size, config.grid.margin)
        .context(|| id.clone())?;
    let n = write_archive(&config.patch_dir(&id), &image, &mask, &grid)?;
    info!("{id}: {n} patches");
    Ok(n)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub samples: usize,
    pub history: TrainingHistory,
}

impl TrainSummary {
    pub fn final_metrics(&self) -> Option<(f64, f64)> {
        Some((*self.history.mean_loss.last()?, *self.history.mean_dice.last()?))
    }
}

/// Trains on every patch of the train-split images, in manifest order.
pub fn cmd_train(config: &PipelineConfig, manifest: &Manifest) -> Result<TrainSummary> {
    let mut dataset = Vec::new();
    for record in manifest.split(Split::Train) {
        let id = record.id();
        let (grid, samples) = read_archive(&config.patch_dir(&id))?;
        if (grid.patch_size, grid.margin) != (config.grid.patch_size, config.grid.margin) {
            return Err(Error::Config(format!(
                "{id}: archive has patch_size {} margin {}, config has {} and {}",
                grid.patch_size, grid.margin, config.grid.patch_size, config.grid.margin
            )));
        }
        dataset.extend(samples);
    }
    if dataset.is_empty() && config.train.epochs > 0 {
        return Err(Error::Manifest("no train-split images".into()));
    }
    let model = build_model(&config.model_config()).context(|| "model".into())?;
    info!(
        "training {} parameters on {} patches for {} epochs",
        model.parameter_count(),
        dataset.len(),
        config.train.epochs
    );
    let start = Instant::now();
    let (model, history) = train_with(model, &dataset, &config.train, |s| {
        info!(
            "epoch {}: loss {:.6} dice {:.4} ({:.1?})",
            s.epoch + 1,
            s.mean_loss,
            s.mean_dice,
            start.elapsed()
        );
    })
    .context(|| "train".into())?;
    save_checkpoint(&model, &config.checkpoint_path())?;
    save_history(&history, &config.history_path())?;
    Ok(TrainSummary {
        samples: dataset.len(),
        history,
    })
}

// ---------------------------------------------------------------------------
// predict

fn load_model_for(config: &PipelineConfig, checkpoint: &Path) -> Result<Model> {
    let model = load_checkpoint(checkpoint)?;
    let mc = model.config();
    if (mc.patch_size, mc.margin) != (config.grid.patch_size, config.grid.margin) {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with patch_size {} margin {}, config has {} and {}",
            checkpoint.display(),
            mc.patch_size,
            mc.margin,
            config.grid.patch_size,
            config.grid.margin
        )));
    }
    Ok(model)
}

/// The saved target profile, or a fresh fit when `normalize` has not run.
fn target_profile(config: &PipelineConfig) -> Result<StainProfile> {
    let path = config.profile_path();
    if path.is_file() {
        return load_profile(&path);
    }
    let target = load_png(&config.target_image)?;
    fit_target_profile(&target, &config.stain).context(|| format!("target {}", config.target_image.display()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutput {
    pub probability_path: PathBuf,
    pub mask_path: PathBuf,
}

pub fn cmd_predict(config: &PipelineConfig, checkpoint: &Path, image_path: &Path) -> Result<PredictOutput> {
    let model = load_model_for(config, checkpoint)?;
    let profile = target_profile(config)?;
    let id = image_id(image_path);
    let image = load_png(image_path)?;
    let normalized = normalize_to_target(&image, &profile, &config.stain).context(|| id.clone())?;
    let probs = histoseg_core::evaluation::segment_slide(&model, &normalized, config.grid.patch_size, config.grid.margin)
        .context(|| id.clone())?;
    let mask = histoseg_core::evaluation::binarize(&probs, config.train.threshold).context(|| id.clone())?;
    let dir = config.predictions_dir();
    let out = PredictOutput {
        probability_path: dir.join(format!("{id}_prob.png")),
        mask_path: dir.join(format!("{id}_mask.png")),
    };
    save_png(&probability_image(&probs), &out.probability_path)?;
    save_mask(&mask, &out.mask_path)?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// evaluate

/// Scores every test-split image. With `gt_as_prediction` the ground truth
/// stands in for the model output, which checks the scoring path alone.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    checkpoint: Option<&Path>,
    manifest: &Manifest,
    gt_as_prediction: bool,
    jobs: usize,
) -> Result<EvalReport> {
    let records: Vec<&Record> = manifest.split(Split::Test).collect();
    if records.is_empty() {
        return Err(Error::Manifest("no test-split images".into()));
    }
    let model_and_profile = if gt_as_prediction {
        None
    } else {
        let default = config.checkpoint_path();
        let model = load_model_for(config, checkpoint.unwrap_or(&default))?;
        Some((model, target_profile(config)?))
    };
    let results = run_pool(jobs, || {
        records
            .par_iter()
            .map(|r| evaluate_one(config, model_and_profile.as_ref(), r))
            .collect::<Vec<_>>()
    })?;
    let report = EvalReport::from_records(first_error(results)?).context(|| "evaluate".into())?;
    save_report(&report, &config.report_path())?;
    Ok(report)
}

fn evaluate_one(
    config: &PipelineConfig,
    model_and_profile: Option<&(Model, StainProfile)>,
    record: &Record,
) -> Result<ImageRecord> {
    let id = record.id();
    let start = Instant::now();
    let gt = load_mask(&record.mask_path)?;
    let (record, probs, mask) = match model_and_profile {
        None => {
            let probs = gt.to_image();
            let (rec, mask) = score_prediction(&id, &probs, &gt, config.train.threshold).context(|| id.clone())?;
            (rec, probs, mask)
        }
        Some((model, profile)) => {
            let image = load_png(&record.image_path)?;
            let e = evaluate_image(
                &id,
                model,
                &image,
                &gt,
                profile,
                &config.stain,
                config.grid.patch_size,
                config.grid.margin,
                config.train.threshold,
            )
            .context(|| id.clone())?;
            (e.record, e.probabilities, e.mask)
        }
    };
    let dir = config.evaluation_dir();
    save_png(&probability_image(&probs), &dir.join(format!("{id}_prob.png")))?;
    save_mask(&mask, &dir.join(format!("{id}_mask.png")))?;
    info!("{id}: dice {:.4} ({:.2?})", record.dice, start.elapsed());
    Ok(record)
}
