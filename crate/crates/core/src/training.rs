//! Loss, optimizer, augmentation and the epoch loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Confusion;
use crate::model::Model;
use crate::patching::PatchPair;
use crate::raster::BinaryMask;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss_smooth: f64,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 8,
            epochs: 50,
            threshold: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss_smooth: 1.0,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size >= 1
            && self.threshold > 0.0
            && self.threshold < 1.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon >= 0.0
            && self.loss_smooth >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Soft Jaccard distance `1 - (I + s) / (U + s)` over flat slices, with its
/// gradient in `pred`. Evaluated as `(U - I) / (U + s)` so that binary inputs
/// with `s = 0` give exactly the set-based distance.
fn soft_jaccard(pred: &[f64], target: &[f64], smooth: f64) -> (f64, Vec<f64>) {
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_y = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        inter += p * y;
        sum_p += p;
        sum_y += y;
    }
    let union = sum_p + sum_y - inter;
    let num = inter + smooth;
    let den = union + smooth;
    if den == 0.0 {
        return (0.0, vec![0.0; pred.len()]);
    }
    let loss = (union - inter) / den;
    let den2 = den * den;
    // dI/dp = y, dU/dp = 1 - y
    let grad = target
        .iter()
        .map(|&y| -(y * den - num * (1.0 - y)) / den2)
        .collect();
    (loss, grad)
}

/// Differentiable Jaccard distance between probabilities and a binary target.
pub fn jaccard_distance_loss(pred: &Tensor, target: &Tensor, smooth: f64) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("jaccard_distance_loss", pred.shape(), target.shape()));
    }
    if pred.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::OutOfRange("predictions must lie in [0, 1]".into()));
    }
    if target.data().iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::OutOfRange("targets must be 0 or 1".into()));
    }
    let (loss, grad) = soft_jaccard(pred.data(), target.data(), smooth);
    Ok((loss, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// `(|A u B| - |A n B|) / |A u B|`, zero when both masks are empty.
pub fn hard_jaccard_distance(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let c = Confusion::between(a, b)?;
    let union = c.tp + c.fp + c.fn_;
    if union == 0 {
        return Ok(0.0);
    }
    Ok((union - c.tp) as f64 / union as f64)
}

/// Moment estimates for AMSGrad, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub v_hat: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        Self {
            m: zeros(),
            v: zeros(),
            v_hat: zeros(),
            t: 0,
        }
    }

    pub fn for_model(model: &Model) -> Self {
        Self::new(&model.parameters())
    }
}

/// One AMSGrad update without bias correction:
///
/// ```text
/// m  <- b1 m + (1 - b1) g
/// v  <- b2 v + (1 - b2) g^2
/// vh <- max(vh, v)
/// th <- th - lr m / (sqrt(vh) + eps)
/// ```
///
/// Nothing is modified when any gradient is non-finite.
pub fn amsgrad_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "amsgrad_step",
            &[params.len()],
            &[grads.len(), state.m.len()],
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::shape("amsgrad_step", p.shape(), g.shape()));
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let (b1, b2) = (config.beta1, config.beta2);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v, vh) = (&mut state.m[k], &mut state.v[k], &mut state.v_hat[k]);
        for (i, (theta, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            if v[i] > vh[i] {
                vh[i] = v[i];
            }
            *theta -= config.learning_rate * m[i] / (libm::sqrt(vh[i]) + config.epsilon);
        }
    }
    state.t += 1;
    Ok(())
}

/// The geometric augmentations used in training, drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    FlipHorizontal,
    FlipVertical,
    Rotate90,
    Rotate180,
}

impl Transform {
    pub const ALL: [Transform; 5] = [
        Transform::Identity,
        Transform::FlipHorizontal,
        Transform::FlipVertical,
        Transform::Rotate90,
        Transform::Rotate180,
    ];

    pub fn draw(rng: &mut SeededRng) -> Self {
        Self::ALL[rng.below(Self::ALL.len() as u64) as usize]
    }

    pub fn apply_image(self, img: &crate::raster::RasterImage) -> crate::raster::RasterImage {
        match self {
            Transform::Identity => img.clone(),
            Transform::FlipHorizontal => img.flip_horizontal(),
            Transform::FlipVertical => img.flip_vertical(),
            Transform::Rotate90 => img.rotate90(),
            Transform::Rotate180 => img.rotate90().rotate90(),
        }
    }

    pub fn apply_mask(self, mask: &BinaryMask) -> BinaryMask {
        match self {
            Transform::Identity => mask.clone(),
            Transform::FlipHorizontal => mask.flip_horizontal(),
            Transform::FlipVertical => mask.flip_vertical(),
            Transform::Rotate90 => mask.rotate90(),
            Transform::Rotate180 => mask.rotate90().rotate90(),
        }
    }

    /// Applies the same transform to both views and the mask.
    pub fn apply(self, pair: &PatchPair, mask: &BinaryMask) -> (PatchPair, BinaryMask) {
        (
            PatchPair {
                local: self.apply_image(&pair.local),
                global_raw: self.apply_image(&pair.global_raw),
                origin: pair.origin,
            },
            self.apply_mask(mask),
        )
    }
}

pub fn augment(pair: &PatchPair, mask: &BinaryMask, rng: &mut SeededRng) -> (PatchPair, BinaryMask) {
    Transform::draw(rng).apply(pair, mask)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub mean_loss: Vec<f64>,
    pub mean_dice: Vec<f64>,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.mean_loss.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_dice: f64,
}

fn check_sample(model: &Model, pair: &PatchPair, mask: &BinaryMask) -> Result<()> {
    let cfg = model.config();
    let (p, g) = (cfg.patch_size, cfg.global_size());
    if pair.local.dims() != (p, p) || pair.local.channels() != 3 {
        return Err(Error::shape(
            "training local patch",
            &[p, p, 3],
            &[pair.local.height(), pair.local.width(), pair.local.channels()],
        ));
    }
    if pair.global_raw.dims() != (g, g) || pair.global_raw.channels() != 3 {
        return Err(Error::shape(
            "training global patch",
            &[g, g, 3],
            &[pair.global_raw.height(), pair.global_raw.width(), pair.global_raw.channels()],
        ));
    }
    if mask.dims() != (p, p) {
        return Err(Error::shape("training mask", &[p, p], &[mask.height(), mask.width()]));
    }
    Ok(())
}

pub fn train(
    model: Model,
    dataset: &[(PatchPair, BinaryMask)],
    config: &TrainConfig,
) -> Result<(Model, TrainingHistory)> {
    train_with(model, dataset, config, |_| {})
}

/// Mini-batch AMSGrad on the mean per-sample soft Jaccard loss.
///
/// Each epoch reshuffles with a stream derived from `(seed, epoch)`; each
/// sample's augmentation uses a stream derived from
/// `(seed, epoch, dataset index)`. The last partial batch is kept.
pub fn train_with(
    mut model: Model,
    dataset: &[(PatchPair, BinaryMask)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model, TrainingHistory)> {
    config.validate()?;
    let mut history = TrainingHistory::default();
    if config.epochs == 0 {
        return Ok((model, history));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    for (pair, mask) in dataset {
        check_sample(&model, pair, mask)?;
    }
    let p = model.config().patch_size;
    let g = model.config().global_size();
    let mut state = OptimizerState::for_model(&model);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        SeededRng::derived(config.seed, &[0, epoch as u64]).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut dice_sum = 0.0;

        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let b = batch.len();
            let mut local = Vec::with_capacity(b * p * p * 3);
            let mut global = Vec::with_capacity(b * g * g * 3);
            let mut targets = Vec::with_capacity(b);
            for &idx in batch {
                let (pair, mask) = &dataset[idx];
                let (pair, mask) = if config.augment {
                    let mut rng = SeededRng::derived(config.seed, &[1, epoch as u64, idx as u64]);
                    augment(pair, mask, &mut rng)
                } else {
                    (pair.clone(), mask.clone())
                };
                local.extend_from_slice(pair.local.pixels());
                global.extend_from_slice(pair.global_raw.pixels());
                targets.push(mask);
            }
            let local = Tensor::new(vec![b, p, p, 3], local)?;
            let global = Tensor::new(vec![b, g, g, 3], global)?;
            let (probs, cache) = model.forward(&local, &global)?;

            let mut output_grad = Vec::with_capacity(b * p * p);
            let mut batch_loss = 0.0;
            for (pred, mask) in probs.data().chunks_exact(p * p).zip(&targets) {
                let y: Vec<f64> = mask.bits().iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
                let (loss, grad) = soft_jaccard(pred, &y, config.loss_smooth);
                batch_loss += loss;
                output_grad.extend(grad.into_iter().map(|v| v / b as f64));
                let seg: Vec<bool> = pred.iter().map(|&v| v > config.threshold).collect();
                dice_sum += Confusion::from_bits(mask.bits(), &seg).dice();
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            loss_sum += batch_loss;

            let grads = model.backward(&cache, &Tensor::new(vec![b, p, p, 1], output_grad)?)?;
            let mut params = model.parameters_mut();
            amsgrad_step(&mut params, &grads.tensors, &mut state, config).map_err(|e| match e {
                Error::NonFiniteGradient => Error::Divergence { epoch, step },
                other => other,
            })?;
        }
        let n = dataset.len() as f64;
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / n,
            mean_dice: dice_sum / n,
        };
        history.mean_loss.push(stats.mean_loss);
        history.mean_dice.push(stats.mean_dice);
        on_epoch(&stats);
    }
    Ok((model, history))
}
