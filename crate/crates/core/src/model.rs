//! Dual-view convolutional encoder-decoder with a hand-written backward pass.
//!
//! Topology for `levels = L` and `base_channels = b`, with `c_l = b * 2^l`:
//!
//! ```text
//! input   local (P x P x 3) ++ bilinear(global -> P x P) (x 3)   = 6 channels
//! enc l   conv3x3 -> ReLU -> conv3x3 -> ReLU  (skip_l)  -> maxpool 2x2
//! bottom  h1 = ReLU(conv3x3), h2 = ReLU(conv3x3(h1)), out = h1 + h2
//! dec l   upsample x2 ++ skip_l -> conv3x3 -> ReLU -> conv3x3 -> ReLU
//! head    dec_0 ++ input (6 channels) -> conv1x1 -> sigmoid
//! ```
//!
//! Activations are NHWC, weights are `[kh, kw, in, out]`. RGB inputs are
//! expected in `[0, 255]` and mapped to `[-1, 1]` on entry. Gradients are
//! computed per sample and summed in batch order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::{resize_bilinear_raw, PatchPair};
use crate::raster::RasterImage;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Channels of the fused input: local RGB followed by resized global RGB.
pub const INPUT_CHANNELS: usize = 6;

/// Maps `[0, 255]` onto `[-1, 1]`.
const INPUT_SCALE: f64 = 1.0 / 127.5;

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub margin: usize,
    pub levels: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: crate::patching::DEFAULT_PATCH_SIZE,
            margin: crate::patching::DEFAULT_MARGIN,
            levels: 3,
            base_channels: 8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn global_size(&self) -> usize {
        self.patch_size + 2 * self.margin
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::InvalidConfig(format!(
                "levels must be in 1..=16, got {}",
                self.levels
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("base_channels must be at least 1".into()));
        }
        let div = 1usize << self.levels;
        if self.patch_size == 0 || self.patch_size % div != 0 {
            return Err(Error::InvalidConfig(format!(
                "patch_size {} must be a positive multiple of 2^levels = {div}",
                self.patch_size
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Convolutions in declaration order.
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        let l_max = self.levels;
        let mut specs = Vec::with_capacity(4 * l_max + 3);
        let mut spec = |name: String, kernel, in_channels, out_channels| {
            specs.push(ConvSpec {
                name,
                kernel,
                in_channels,
                out_channels,
            })
        };
        for l in 0..l_max {
            let input = if l == 0 { INPUT_CHANNELS } else { self.channels(l - 1) };
            spec(format!("enc{l}.conv1"), 3, input, self.channels(l));
            spec(format!("enc{l}.conv2"), 3, self.channels(l), self.channels(l));
        }
        spec("bottleneck.conv1".into(), 3, self.channels(l_max - 1), self.channels(l_max));
        spec("bottleneck.conv2".into(), 3, self.channels(l_max), self.channels(l_max));
        for l in (0..l_max).rev() {
            let input = self.channels(l + 1) + self.channels(l);
            spec(format!("dec{l}.conv1"), 3, input, self.channels(l));
            spec(format!("dec{l}.conv2"), 3, self.channels(l), self.channels(l));
        }
        spec("head".into(), 1, self.channels(0) + INPUT_CHANNELS, 1);
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_specs().iter().map(ConvSpec::parameter_count).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.kernel, self.kernel, self.in_channels, self.out_channels]
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    convs: Vec<Conv2d>,
    id: u64,
    revision: u64,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            convs: self.convs.clone(),
            id: fresh_id(),
            revision: 0,
        }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.convs == other.convs
    }
}

/// He-normal weights and zero biases drawn from the config seed; the 1x1
/// head is zero-initialized.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let specs = config.conv_specs();
    let head = specs.len() - 1;
    let convs = specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let fan_in = (spec.kernel * spec.kernel * spec.in_channels) as f64;
            let std = libm::sqrt(2.0 / fan_in);
            let shape = spec.weight_shape();
            let n: usize = shape.iter().product();
            // The head starts at zero so every pixel begins at p = 0.5.
            let data = if i == head {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.normal() * std).collect()
            };
            Conv2d {
                weight: Tensor::new(shape.to_vec(), data).expect("weight shape"),
                bias: Tensor::zeros(&[spec.out_channels]),
                spec,
            }
        })
        .collect();
    Ok(Model {
        config: config.clone(),
        convs,
        id: fresh_id(),
        revision: 0,
    })
}

impl Model {
    /// Rebuilds a model from parameters in declaration order
    /// (`weight, bias` per convolution).
    pub fn from_parameters(config: &ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = config.conv_specs();
        if params.len() != 2 * specs.len() {
            return Err(Error::shape(
                "Model::from_parameters",
                &[2 * specs.len()],
                &[params.len()],
            ));
        }
        let mut it = params.into_iter();
        let mut convs = Vec::with_capacity(specs.len());
        for spec in specs {
            let weight = it.next().expect("counted");
            let bias = it.next().expect("counted");
            if weight.shape() != spec.weight_shape() {
                return Err(Error::shape("conv weight", &spec.weight_shape(), weight.shape()));
            }
            if bias.shape() != [spec.out_channels] {
                return Err(Error::shape("conv bias", &[spec.out_channels], bias.shape()));
            }
            convs.push(Conv2d { spec, weight, bias });
        }
        Ok(Self {
            config: config.clone(),
            convs,
            id: fresh_id(),
            revision: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn convs(&self) -> &[Conv2d] {
        &self.convs
    }

    pub fn parameter_count(&self) -> usize {
        self.convs.iter().map(|c| c.weight.len() + c.bias.len()).sum()
    }

    /// Parameters in declaration order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.convs.iter().flat_map(|c| [&c.weight, &c.bias]).collect()
    }

    /// Mutable parameters in declaration order. Invalidates outstanding
    /// forward caches.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.revision += 1;
        self.convs
            .iter_mut()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .collect()
    }

    fn check_inputs(&self, local: &Tensor, global: &Tensor) -> Result<usize> {
        let p = self.config.patch_size;
        let g = self.config.global_size();
        let ls = local.shape();
        if ls.len() != 4 || ls[1..] != [p, p, 3] {
            let b = ls.first().copied().unwrap_or(0);
            return Err(Error::shape("forward local batch", &[b, p, p, 3], ls));
        }
        let b = ls[0];
        if global.shape() != [b, g, g, 3] {
            return Err(Error::shape("forward global batch", &[b, g, g, 3], global.shape()));
        }
        Ok(b)
    }

    fn fuse_input(&self, local: &[f64], global: &[f64]) -> Fm {
        let p = self.config.patch_size;
        let g = self.config.global_size();
        let resized = resize_bilinear_raw(global, g, g, 3, p, p);
        let mut data = Vec::with_capacity(p * p * INPUT_CHANNELS);
        for (l, r) in local.chunks_exact(3).zip(resized.chunks_exact(3)) {
            data.extend(l.iter().chain(r).map(|v| v * INPUT_SCALE - 1.0));
        }
        Fm { h: p, w: p, c: INPUT_CHANNELS, data }
    }

    fn sample_forward(&self, x0: Fm) -> SampleCache {
        let l_max = self.config.levels;
        let conv = |i: usize| &self.convs[i];
        let mut enc = Vec::with_capacity(l_max);
        let mut current: Option<&Fm> = None;
        for l in 0..l_max {
            let input = current.unwrap_or(&x0);
            let a1 = relu(conv_forward(input, conv(2 * l)));
            let a2 = relu(conv_forward(&a1, conv(2 * l + 1)));
            let (pooled, argmax) = maxpool_forward(&a2);
            enc.push(EncCache {
                a1,
                a2,
                pooled,
                argmax,
            });
            current = Some(&enc[l].pooled);
        }
        let bottom_in = &enc[l_max - 1].pooled;
        let h1 = relu(conv_forward(bottom_in, conv(2 * l_max)));
        let h2 = relu(conv_forward(&h1, conv(2 * l_max + 1)));
        let bottom_out = add(&h1, &h2);

        let mut dec: Vec<DecCache> = Vec::with_capacity(l_max);
        for (step, l) in (0..l_max).rev().enumerate() {
            let below = if step == 0 { &bottom_out } else { &dec[step - 1].d2 };
            let cat = concat(&upsample_forward(below), &enc[l].a2);
            let base = 2 * l_max + 2 + 2 * step;
            let d1 = relu(conv_forward(&cat, conv(base)));
            let d2 = relu(conv_forward(&d1, conv(base + 1)));
            dec.push(DecCache { cat, d1, d2 });
        }
        let head_in = concat(&dec[l_max - 1].d2, &x0);
        let mut probs = conv_forward(&head_in, conv(4 * l_max + 2));
        for v in probs.data.iter_mut() {
            *v = sigmoid(*v);
        }
        SampleCache {
            x0,
            enc,
            h1,
            h2,
            dec,
            head_in,
            probs,
        }
    }

    /// Runs a batch. `local` is `B x P x P x 3`, `global` is `B x G x G x 3`
    /// with `G = P + 2 * margin`; the result is `B x P x P x 1`.
    pub fn forward(&self, local: &Tensor, global: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let b = self.check_inputs(local, global)?;
        let p = self.config.patch_size;
        let g = self.config.global_size();
        let mut out = Vec::with_capacity(b * p * p);
        let mut samples = Vec::with_capacity(b);
        for (l, gl) in local
            .data()
            .chunks_exact(p * p * 3)
            .zip(global.data().chunks_exact(g * g * 3))
        {
            let cache = self.sample_forward(self.fuse_input(l, gl));
            out.extend_from_slice(&cache.probs.data);
            samples.push(cache);
        }
        let probs = Tensor::new(vec![b, p, p, 1], out)?;
        Ok((
            probs,
            ForwardCache {
                model_id: self.id,
                revision: self.revision,
                samples,
            },
        ))
    }

    /// Exact gradients of `sum(output_grad * probs)` with respect to every
    /// parameter, in declaration order.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<Gradients> {
        if cache.model_id != self.id || cache.revision != self.revision {
            return Err(Error::StaleCache);
        }
        let p = self.config.patch_size;
        let b = cache.samples.len();
        if output_grad.shape() != [b, p, p, 1] {
            return Err(Error::shape("backward output_grad", &[b, p, p, 1], output_grad.shape()));
        }
        let mut total: Vec<Tensor> = self
            .parameters()
            .iter()
            .map(|t| Tensor::zeros_like(t))
            .collect();
        for (sample, g) in cache.samples.iter().zip(output_grad.data().chunks_exact(p * p)) {
            let grads = self.sample_backward(sample, g);
            for (acc, part) in total.iter_mut().zip(grads) {
                for (a, v) in acc.data_mut().iter_mut().zip(part) {
                    *a += v;
                }
            }
        }
        Ok(Gradients { tensors: total })
    }

    fn sample_backward(&self, s: &SampleCache, output_grad: &[f64]) -> Vec<Vec<f64>> {
        let l_max = self.config.levels;
        let mut grads: Vec<Vec<f64>> = self
            .convs
            .iter()
            .flat_map(|c| [vec![0.0; c.weight.len()], vec![0.0; c.bias.len()]])
            .collect();
        let mut backprop = |idx: usize, input: &Fm, dout: &Fm, need_input: bool| {
            let (dw, rest) = grads[2 * idx..].split_at_mut(1);
            conv_backward(input, &self.convs[idx], dout, need_input, &mut dw[0], &mut rest[0])
        };

        let dz = Fm {
            h: s.probs.h,
            w: s.probs.w,
            c: 1,
            data: s
                .probs
                .data
                .iter()
                .zip(output_grad)
                .map(|(&p, &g)| g * p * (1.0 - p))
                .collect(),
        };
        let d_head_in = backprop(4 * l_max + 2, &s.head_in, &dz, true).expect("input grad");
        let c0 = self.config.channels(0);
        let (mut d_up, _) = split_channels(&d_head_in, c0);

        let mut d_skips: Vec<Option<Fm>> = (0..l_max).map(|_| None).collect();
        for step in (0..l_max).rev() {
            let l = l_max - 1 - step;
            let cache = &s.dec[step];
            let base = 2 * l_max + 2 + 2 * step;
            relu_backward(&mut d_up, &cache.d2);
            let mut dd1 = backprop(base + 1, &cache.d1, &d_up, true).expect("input grad");
            relu_backward(&mut dd1, &cache.d1);
            let dcat = backprop(base, &cache.cat, &dd1, true).expect("input grad");
            let (d_upsampled, d_skip) = split_channels(&dcat, self.config.channels(l + 1));
            d_skips[l] = Some(d_skip);
            d_up = upsample_backward(&d_upsampled);
        }

        // Bottleneck: out = h1 + h2.
        let d_out = d_up;
        let mut g2 = d_out.clone();
        relu_backward(&mut g2, &s.h2);
        let dh1_from2 = backprop(2 * l_max + 1, &s.h1, &g2, true).expect("input grad");
        let mut g1 = add(&d_out, &dh1_from2);
        relu_backward(&mut g1, &s.h1);
        let mut d_pooled =
            backprop(2 * l_max, &s.enc[l_max - 1].pooled, &g1, true).expect("input grad");

        for l in (0..l_max).rev() {
            let cache = &s.enc[l];
            let mut d_a2 = maxpool_backward(&d_pooled, &cache.argmax, &cache.a2);
            let skip = d_skips[l].take().expect("decoder visited every level");
            for (d, v) in d_a2.data.iter_mut().zip(&skip.data) {
                *d += v;
            }
            relu_backward(&mut d_a2, &cache.a2);
            let mut d_a1 = backprop(2 * l + 1, &cache.a1, &d_a2, true).expect("input grad");
            relu_backward(&mut d_a1, &cache.a1);
            let input = if l == 0 { &s.x0 } else { &s.enc[l - 1].pooled };
            match backprop(2 * l, input, &d_a1, l > 0) {
                Some(d) => d_pooled = d,
                None => break,
            }
        }
        grads
    }

    /// Single-pair inference. Returns a `P x P` probability raster.
    pub fn predict_patch(&self, pair: &PatchPair) -> Result<RasterImage> {
        let p = self.config.patch_size;
        let g = self.config.global_size();
        if pair.local.dims() != (p, p) || pair.local.channels() != 3 {
            return Err(Error::shape(
                "predict local",
                &[p, p, 3],
                &[pair.local.height(), pair.local.width(), pair.local.channels()],
            ));
        }
        if pair.global_raw.dims() != (g, g) || pair.global_raw.channels() != 3 {
            return Err(Error::shape(
                "predict global",
                &[g, g, 3],
                &[pair.global_raw.height(), pair.global_raw.width(), pair.global_raw.channels()],
            ));
        }
        let local = Tensor::new(vec![1, p, p, 3], pair.local.pixels().to_vec())?;
        let global = Tensor::new(vec![1, g, g, 3], pair.global_raw.pixels().to_vec())?;
        let (probs, _) = self.forward(&local, &global)?;
        RasterImage::new(p, p, 1, probs.into_data())
    }
}

/// Parameter gradients in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

/// Activations retained by [`Model::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    model_id: u64,
    revision: u64,
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    /// Which smooth piece of the network the forward pass landed on: one
    /// byte per ReLU unit (on or off) and one per pooling window (the
    /// argmax). Two passes with equal patterns differ only through the
    /// smooth parts of the network, so finite differences between them are
    /// meaningful.
    pub fn activation_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut relu_states = |fm: &Fm| out.extend(fm.data.iter().map(|&v| u8::from(v > 0.0)));
        for s in &self.samples {
            for e in &s.enc {
                relu_states(&e.a1);
                relu_states(&e.a2);
            }
            relu_states(&s.h1);
            relu_states(&s.h2);
            for d in &s.dec {
                relu_states(&d.d1);
                relu_states(&d.d2);
            }
        }
        for s in &self.samples {
            for e in &s.enc {
                out.extend_from_slice(&e.argmax);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct SampleCache {
    x0: Fm,
    enc: Vec<EncCache>,
    h1: Fm,
    h2: Fm,
    /// Decoder stages in execution order (deepest first).
    dec: Vec<DecCache>,
    head_in: Fm,
    probs: Fm,
}

#[derive(Debug, Clone)]
struct EncCache {
    a1: Fm,
    a2: Fm,
    pooled: Fm,
    argmax: Vec<u8>,
}

#[derive(Debug, Clone)]
struct DecCache {
    cat: Fm,
    d1: Fm,
    d2: Fm,
}

/// Single-sample `h x w x c` feature map.
#[derive(Debug, Clone, PartialEq)]
struct Fm {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    };
    // Keep the output strictly inside (0, 1) under saturation.
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn relu(mut x: Fm) -> Fm {
    for v in x.data.iter_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    x
}

/// Zeroes gradient entries where the post-activation output is not positive.
fn relu_backward(grad: &mut Fm, output: &Fm) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

fn add(a: &Fm, b: &Fm) -> Fm {
    Fm {
        h: a.h,
        w: a.w,
        c: a.c,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    }
}

fn concat(a: &Fm, b: &Fm) -> Fm {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.h * a.w * (a.c + b.c));
    for (pa, pb) in a.data.chunks_exact(a.c).zip(b.data.chunks_exact(b.c)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Fm {
        h: a.h,
        w: a.w,
        c: a.c + b.c,
        data,
    }
}

fn split_channels(x: &Fm, first: usize) -> (Fm, Fm) {
    let second = x.c - first;
    let mut a = Vec::with_capacity(x.h * x.w * first);
    let mut b = Vec::with_capacity(x.h * x.w * second);
    for px in x.data.chunks_exact(x.c) {
        a.extend_from_slice(&px[..first]);
        b.extend_from_slice(&px[first..]);
    }
    (
        Fm { h: x.h, w: x.w, c: first, data: a },
        Fm { h: x.h, w: x.w, c: second, data: b },
    )
}

fn conv_forward(input: &Fm, conv: &Conv2d) -> Fm {
    let (h, w, cin) = (input.h, input.w, input.c);
    let k = conv.spec.kernel;
    let cout = conv.spec.out_channels;
    debug_assert_eq!(cin, conv.spec.in_channels);
    let pad = (k / 2) as isize;
    let weight = conv.weight.data();
    let bias = conv.bias.data();
    let mut out = vec![0.0; h * w * cout];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
            o.copy_from_slice(bias);
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let base = (iy as usize * w + ix as usize) * cin;
                    let inp = &input.data[base..base + cin];
                    let wbase = (ky * k + kx) * cin * cout;
                    for (i, &a) in inp.iter().enumerate() {
                        if a == 0.0 {
                            continue;
                        }
                        let row = &weight[wbase + i * cout..wbase + (i + 1) * cout];
                        for (acc, &wv) in o.iter_mut().zip(row) {
                            *acc += a * wv;
                        }
                    }
                }
            }
        }
    }
    Fm { h, w, c: cout, data: out }
}

fn conv_backward(
    input: &Fm,
    conv: &Conv2d,
    dout: &Fm,
    need_input: bool,
    dw: &mut [f64],
    db: &mut [f64],
) -> Option<Fm> {
    let (h, w, cin) = (input.h, input.w, input.c);
    let k = conv.spec.kernel;
    let cout = conv.spec.out_channels;
    let pad = (k / 2) as isize;
    let weight = conv.weight.data();
    let mut din = if need_input { vec![0.0; h * w * cin] } else { Vec::new() };
    for y in 0..h {
        for x in 0..w {
            let g = &dout.data[(y * w + x) * cout..(y * w + x + 1) * cout];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (b, &gv) in db.iter_mut().zip(g) {
                *b += gv;
            }
            for ky in 0..k {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = x as isize + kx as isize - pad;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let base = (iy as usize * w + ix as usize) * cin;
                    let wbase = (ky * k + kx) * cin * cout;
                    for i in 0..cin {
                        let range = wbase + i * cout..wbase + (i + 1) * cout;
                        let a = input.data[base + i];
                        if a != 0.0 {
                            for (d, &gv) in dw[range.clone()].iter_mut().zip(g) {
                                *d += a * gv;
                            }
                        }
                        if need_input {
                            let row = &weight[range];
                            let mut s = 0.0;
                            for (&wv, &gv) in row.iter().zip(g) {
                                s += wv * gv;
                            }
                            din[base + i] += s;
                        }
                    }
                }
            }
        }
    }
    need_input.then(|| Fm { h, w, c: cin, data: din })
}

fn maxpool_forward(x: &Fm) -> (Fm, Vec<u8>) {
    let (oh, ow, c) = (x.h / 2, x.w / 2, x.c);
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for xx in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_k = 0u8;
                for k in 0..4u8 {
                    let (dy, dx) = ((k / 2) as usize, (k % 2) as usize);
                    let v = x.data[((2 * y + dy) * x.w + 2 * xx + dx) * c + ch];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                out.push(best);
                arg.push(best_k);
            }
        }
    }
    (Fm { h: oh, w: ow, c, data: out }, arg)
}

fn maxpool_backward(dout: &Fm, argmax: &[u8], input: &Fm) -> Fm {
    let mut din = vec![0.0; input.data.len()];
    let (oh, ow, c) = (dout.h, dout.w, dout.c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let j = (y * ow + x) * c + ch;
                let k = argmax[j] as usize;
                let (dy, dx) = (k / 2, k % 2);
                din[((2 * y + dy) * input.w + 2 * x + dx) * c + ch] += dout.data[j];
            }
        }
    }
    Fm { h: input.h, w: input.w, c, data: din }
}

fn upsample_forward(x: &Fm) -> Fm {
    let (h, w, c) = (2 * x.h, 2 * x.w, x.c);
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for xx in 0..w {
            let src = ((y / 2) * x.w + xx / 2) * c;
            data.extend_from_slice(&x.data[src..src + c]);
        }
    }
    Fm { h, w, c, data }
}

fn upsample_backward(d: &Fm) -> Fm {
    let (h, w, c) = (d.h / 2, d.w / 2, d.c);
    let mut data = vec![0.0; h * w * c];
    for y in 0..d.h {
        for x in 0..d.w {
            let dst = ((y / 2) * w + x / 2) * c;
            let src = (y * d.w + x) * c;
            for ch in 0..c {
                data[dst + ch] += d.data[src + ch];
            }
        }
    }
    Fm { h, w, c, data }
}
