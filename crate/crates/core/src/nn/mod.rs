//! Compact convolutional classifier trained from scratch on scalogram
//! images: tensor primitives, backpropagation, SGD with momentum, and
//! the training loop.

mod augment;
mod weights;

pub use augment::{augment_task1, augment_task2_histeq};
pub use weights::{checksum64, load_weights, model_checksum, save_weights};

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::cwt::ScalogramImage;
use crate::eval::{confusion_matrix_from_predictions, ConfusionMatrix};
use crate::synth::{LabeledImageDataset, Split};
use crate::{Error, Result};

/// Classifier head after the conv blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Global average pooling: one feature per channel.
    GlobalAveragePool,
    /// Flatten the final feature map; keeps spatial position, which the
    /// time-shift classes need.
    Flatten,
}

/// Layer layout of the compact CNN. Each conv block is a 3x3 same-pad
/// convolution, relu, and 2x2 max pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub in_channels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub num_classes: usize,
    pub head: Head,
}

impl Architecture {
    pub fn compact(num_classes: usize, input_size: usize) -> Self {
        Architecture {
            input_size,
            in_channels: 3,
            conv_channels: vec![16, 32, 64],
            kernel: 3,
            num_classes,
            head: Head::Flatten,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Invalid("need at least 2 classes".into()));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::Invalid("need at least one conv block".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Invalid("kernel must be odd".into()));
        }
        let div = 1usize << self.conv_channels.len();
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Invalid(format!(
                "input size {} not divisible by {div}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Spatial side length after all pooling stages.
    pub fn final_side(&self) -> usize {
        self.input_size >> self.conv_channels.len()
    }

    pub fn feature_dim(&self) -> usize {
        let last = *self.conv_channels.last().unwrap();
        match self.head {
            Head::GlobalAveragePool => last,
            Head::Flatten => last * self.final_side() * self.final_side(),
        }
    }
}

/// Class-probability output of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    pub probs: Vec<f64>,
}

impl ProbabilityVector {
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn dot(&self, other: &ProbabilityVector) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// The classifier: parameters plus architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactCnn {
    pub arch: Architecture,
    pub class_names: Vec<String>,
    /// Per block, `out * in * k * k` weights.
    pub conv_weights: Vec<Vec<f64>>,
    pub conv_bias: Vec<Vec<f64>>,
    /// `num_classes * feature_dim`.
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Tensor {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    #[inline]
    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.h * self.w;
        &mut self.data[c * hw..(c + 1) * hw]
    }
}

impl CompactCnn {
    /// He-style fan-in uniform initialization, seeded.
    pub fn init(arch: Architecture, class_names: Vec<String>, seed: u64) -> Result<Self> {
        arch.validate()?;
        if class_names.len() != arch.num_classes {
            return Err(Error::Invalid(format!(
                "{} class names for {} classes",
                class_names.len(),
                arch.num_classes
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let k = arch.kernel;
        let mut conv_weights = Vec::new();
        let mut conv_bias = Vec::new();
        let mut in_c = arch.in_channels;
        for &out_c in &arch.conv_channels {
            let fan_in = (in_c * k * k) as f64;
            let limit = (6.0 / fan_in).sqrt();
            conv_weights.push(
                (0..out_c * in_c * k * k)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect(),
            );
            conv_bias.push(vec![0.0; out_c]);
            in_c = out_c;
        }
        let feat = arch.feature_dim();
        let limit = (6.0 / feat as f64).sqrt();
        let dense_w = (0..arch.num_classes * feat)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        let dense_b = vec![0.0; arch.num_classes];
        Ok(CompactCnn {
            arch,
            class_names,
            conv_weights,
            conv_bias,
            dense_w,
            dense_b,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn image_to_tensor(&self, image: &ScalogramImage) -> Result<Tensor> {
        let s = self.arch.input_size;
        if image.width != s || image.height != s {
            return Err(Error::Shape(format!(
                "image is {}x{}, model expects {s}x{s}",
                image.width, image.height
            )));
        }
        let mut t = Tensor::zeros(self.arch.in_channels, s, s);
        for ch in 0..self.arch.in_channels {
            let plane = t.plane_mut(ch);
            for (i, px) in plane.iter_mut().enumerate() {
                *px = image.pixels[i * 3 + ch] as f64 / 255.0;
            }
        }
        Ok(t)
    }

    /// Class probabilities for one image.
    pub fn forward(&self, image: &ScalogramImage) -> Result<ProbabilityVector> {
        let input = self.image_to_tensor(image)?;
        let cache = self.forward_tensor(&input);
        Ok(ProbabilityVector { probs: cache.probs })
    }

    pub fn predict_class(&self, image: &ScalogramImage) -> Result<usize> {
        Ok(self.forward(image)?.argmax())
    }

    fn forward_tensor(&self, input: &Tensor) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.conv_weights.len());
        let mut pre_relu = Vec::with_capacity(self.conv_weights.len());
        let mut pool_argmax = Vec::with_capacity(self.conv_weights.len());
        let mut current = input.clone();
        for (b, (w, bias)) in self.conv_weights.iter().zip(&self.conv_bias).enumerate() {
            let out_c = self.arch.conv_channels[b];
            let conv = conv2d_forward(&current, w, bias, out_c, self.arch.kernel);
            let mut relu = conv.clone();
            for v in relu.data.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let (pooled, argmax) = maxpool2_forward(&relu);
            inputs.push(current);
            pre_relu.push(conv);
            pool_argmax.push(argmax);
            current = pooled;
        }

        let features: Vec<f64> = match self.arch.head {
            Head::GlobalAveragePool => {
                let hw = (current.h * current.w) as f64;
                (0..current.c)
                    .map(|c| current.plane(c).iter().sum::<f64>() / hw)
                    .collect()
            }
            Head::Flatten => current.data.clone(),
        };

        let classes = self.arch.num_classes;
        let feat = features.len();
        let mut logits = self.dense_b.clone();
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &self.dense_w[c * feat..(c + 1) * feat];
            *logit += row.iter().zip(&features).map(|(w, f)| w * f).sum::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        debug_assert_eq!(probs.len(), classes);

        ForwardCache {
            inputs,
            pre_relu,
            pool_argmax,
            last_pooled: current,
            features,
            probs,
        }
    }

    /// Flat copy of every parameter, in persistence order.
    pub fn param_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.conv_weights.iter().zip(&self.conv_bias) {
            v.extend_from_slice(w);
            v.extend_from_slice(b);
        }
        v.extend_from_slice(&self.dense_w);
        v.extend_from_slice(&self.dense_b);
        v
    }

    pub fn set_param_vec(&mut self, params: &[f64]) {
        let mut at = 0;
        let mut copy = |dst: &mut [f64]| {
            let len = dst.len();
            dst.copy_from_slice(&params[at..at + len]);
            at += len;
        };
        for (w, b) in self.conv_weights.iter_mut().zip(self.conv_bias.iter_mut()) {
            copy(w);
            copy(b);
        }
        copy(&mut self.dense_w);
        copy(&mut self.dense_b);
        assert_eq!(at, params.len());
    }

    /// Rounds every parameter to f32 precision so the 32-bit weights
    /// file round-trips bitwise.
    pub fn quantize_params(&mut self) {
        let rounded: Vec<f64> = self.param_vec().iter().map(|&p| p as f32 as f64).collect();
        self.set_param_vec(&rounded);
    }
}

struct ForwardCache {
    inputs: Vec<Tensor>,
    pre_relu: Vec<Tensor>,
    pool_argmax: Vec<Vec<usize>>,
    last_pooled: Tensor,
    features: Vec<f64>,
    probs: Vec<f64>,
}

/// Same-padding stride-1 convolution.
fn conv2d_forward(input: &Tensor, weights: &[f64], bias: &[f64], out_c: usize, k: usize) -> Tensor {
    let (h, w) = (input.h, input.w);
    let pad = k / 2;
    let mut out = Tensor::zeros(out_c, h, w);
    for oc in 0..out_c {
        let plane = out.plane_mut(oc);
        let b = bias[oc];
        for v in plane.iter_mut() {
            *v = b;
        }
    }
    for oc in 0..out_c {
        for ic in 0..input.c {
            let in_plane = input.plane(ic);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weights[((oc * input.c + ic) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // out[y][x] += wv * in[y + ky - pad][x + kx - pad]
                    let y_lo = pad.saturating_sub(ky);
                    let y_hi = (h + pad - ky).min(h);
                    let x_lo = pad.saturating_sub(kx);
                    let x_hi = (w + pad - kx).min(w);
                    let out_plane = out.plane_mut(oc);
                    for y in y_lo..y_hi {
                        let iy = y + ky - pad;
                        let orow = &mut out_plane[y * w + x_lo..y * w + x_hi];
                        let irow =
                            &in_plane[iy * w + (x_lo + kx - pad)..iy * w + (x_hi + kx - pad)];
                        for (o, i) in orow.iter_mut().zip(irow) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of the convolution: returns d_input and accumulates into
/// d_weights / d_bias.
fn conv2d_backward(
    input: &Tensor,
    d_out: &Tensor,
    weights: &[f64],
    k: usize,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> Tensor {
    let (h, w) = (input.h, input.w);
    let pad = k / 2;
    let mut d_in = Tensor::zeros(input.c, h, w);
    for oc in 0..d_out.c {
        let d_plane = d_out.plane(oc);
        d_bias[oc] += d_plane.iter().sum::<f64>();
        for ic in 0..input.c {
            let in_plane = input.plane(ic);
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * input.c + ic) * k + ky) * k + kx;
                    let wv = weights[widx];
                    let y_lo = pad.saturating_sub(ky);
                    let y_hi = (h + pad - ky).min(h);
                    let x_lo = pad.saturating_sub(kx);
                    let x_hi = (w + pad - kx).min(w);
                    let mut dw = 0.0;
                    let din_plane = d_in.plane_mut(ic);
                    for y in y_lo..y_hi {
                        let iy = y + ky - pad;
                        let drow = &d_plane[y * w + x_lo..y * w + x_hi];
                        let irow =
                            &in_plane[iy * w + (x_lo + kx - pad)..iy * w + (x_hi + kx - pad)];
                        let dirow =
                            &mut din_plane[iy * w + (x_lo + kx - pad)..iy * w + (x_hi + kx - pad)];
                        for ((d, i), di) in drow.iter().zip(irow).zip(dirow) {
                            dw += d * i;
                            *di += wv * d;
                        }
                    }
                    d_weights[widx] += dw;
                }
            }
        }
    }
    d_in
}

/// 2x2 stride-2 max pooling; records the flat input index of each max.
fn maxpool2_forward(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (h, w) = (input.h / 2, input.w / 2);
    let mut out = Tensor::zeros(input.c, h, w);
    let mut argmax = vec![0usize; input.c * h * w];
    for c in 0..input.c {
        let plane = input.plane(c);
        let base = c * input.h * input.w;
        for y in 0..h {
            for x in 0..w {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (2 * y + dy) * input.w + 2 * x + dx;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = base + idx;
                        }
                    }
                }
                out.data[c * h * w + y * w + x] = best;
                argmax[c * h * w + y * w + x] = best_idx;
            }
        }
    }
    (out, argmax)
}

/// All parameter gradients, shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub conv_weights: Vec<Vec<f64>>,
    pub conv_bias: Vec<Vec<f64>>,
    pub dense_w: Vec<f64>,
    pub dense_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &CompactCnn) -> Self {
        Gradients {
            conv_weights: model
                .conv_weights
                .iter()
                .map(|w| vec![0.0; w.len()])
                .collect(),
            conv_bias: model.conv_bias.iter().map(|b| vec![0.0; b.len()]).collect(),
            dense_w: vec![0.0; model.dense_w.len()],
            dense_b: vec![0.0; model.dense_b.len()],
        }
    }

    fn scale(&mut self, s: f64) {
        for w in self
            .conv_weights
            .iter_mut()
            .chain(self.conv_bias.iter_mut())
        {
            for v in w.iter_mut() {
                *v *= s;
            }
        }
        for v in self.dense_w.iter_mut().chain(self.dense_b.iter_mut()) {
            *v *= s;
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.conv_weights.iter().zip(&self.conv_bias) {
            v.extend_from_slice(w);
            v.extend_from_slice(b);
        }
        v.extend_from_slice(&self.dense_w);
        v.extend_from_slice(&self.dense_b);
        v
    }
}

/// Mean cross-entropy of a batch and its parameter gradients.
pub fn loss_and_gradients(
    model: &CompactCnn,
    batch: &[(&ScalogramImage, usize)],
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let classes = model.arch.num_classes;
    let mut grads = Gradients::zeros_like(model);
    let mut total_loss = 0.0;
    for &(image, label) in batch {
        if label >= classes {
            return Err(Error::Invalid(format!("label {label} out of range")));
        }
        let input = model.image_to_tensor(image)?;
        let cache = model.forward_tensor(&input);
        total_loss += -cache.probs[label].max(1e-300).ln();

        // Softmax + CE: d_logits = p - onehot.
        let mut d_logits = cache.probs.clone();
        d_logits[label] -= 1.0;

        let feat = cache.features.len();
        let mut d_features = vec![0.0; feat];
        for c in 0..classes {
            let row = &model.dense_w[c * feat..(c + 1) * feat];
            let g = d_logits[c];
            grads.dense_b[c] += g;
            let grow = &mut grads.dense_w[c * feat..(c + 1) * feat];
            for f in 0..feat {
                grow[f] += g * cache.features[f];
                d_features[f] += g * row[f];
            }
        }

        let last = &cache.last_pooled;
        let mut d_current = Tensor::zeros(last.c, last.h, last.w);
        match model.arch.head {
            Head::Flatten => d_current.data.copy_from_slice(&d_features),
            Head::GlobalAveragePool => {
                let hw = (last.h * last.w) as f64;
                for c in 0..last.c {
                    let g = d_features[c] / hw;
                    for v in d_current.plane_mut(c) {
                        *v = g;
                    }
                }
            }
        }

        for b in (0..model.conv_weights.len()).rev() {
            // Max pool: route each gradient to the winning input.
            let relu_shape = &cache.pre_relu[b];
            let mut d_relu = Tensor::zeros(relu_shape.c, relu_shape.h, relu_shape.w);
            for (i, &src) in cache.pool_argmax[b].iter().enumerate() {
                d_relu.data[src] += d_current.data[i];
            }
            // Relu.
            for (d, &pre) in d_relu.data.iter_mut().zip(&cache.pre_relu[b].data) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            d_current = conv2d_backward(
                &cache.inputs[b],
                &d_relu,
                &model.conv_weights[b],
                model.arch.kernel,
                &mut grads.conv_weights[b],
                &mut grads.conv_bias[b],
            );
        }
    }

    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    Ok((total_loss * inv, grads))
}

/// Momentum buffers for SGD.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Gradients,
}

impl SgdState {
    pub fn new(model: &CompactCnn) -> Self {
        SgdState {
            velocity: Gradients::zeros_like(model),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub train_fraction: f64,
    pub augment_probability: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            learning_rate: 0.01,
            momentum: 0.9,
            train_fraction: 0.7,
            augment_probability: 0.5,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Invalid("learning_rate must be >= 0".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Invalid("train_fraction must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(Error::Invalid(
                "augment_probability must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One SGD-with-momentum step on the mean cross-entropy of `batch`.
/// Returns the pre-update batch loss.
pub fn backward_and_step(
    model: &mut CompactCnn,
    batch: &[(&ScalogramImage, usize)],
    cfg: &TrainConfig,
    state: &mut SgdState,
) -> Result<f64> {
    let (loss, grads) = loss_and_gradients(model, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let lr = cfg.learning_rate;
    let mu = cfg.momentum;
    let update = |p: &mut [f64], v: &mut [f64], g: &[f64]| {
        for i in 0..p.len() {
            v[i] = mu * v[i] - lr * g[i];
            p[i] += v[i];
        }
    };
    for b in 0..model.conv_weights.len() {
        update(
            &mut model.conv_weights[b],
            &mut state.velocity.conv_weights[b],
            &grads.conv_weights[b],
        );
        update(
            &mut model.conv_bias[b],
            &mut state.velocity.conv_bias[b],
            &grads.conv_bias[b],
        );
    }
    update(
        &mut model.dense_w,
        &mut state.velocity.dense_w,
        &grads.dense_w,
    );
    update(
        &mut model.dense_b,
        &mut state.velocity.dense_b,
        &grads.dense_b,
    );
    Ok(loss)
}

/// Trains the compact CNN on the train split with Task-1 augmentation
/// and evaluates the test split into a confusion matrix. Deterministic
/// per (dataset, cfg).
pub fn train_classifier(
    dataset: &LabeledImageDataset,
    cfg: &TrainConfig,
) -> Result<(CompactCnn, ConfusionMatrix)> {
    cfg.validate()?;
    if dataset.class_names.len() < 2 {
        return Err(Error::Invalid(
            "dataset must have at least 2 classes".into(),
        ));
    }
    let train_idx = dataset.split_indices(Split::Train);
    let test_idx = dataset.split_indices(Split::Test);
    for (ci, name) in dataset.class_names.iter().enumerate() {
        if !train_idx.iter().any(|&i| dataset.labels[i] == ci) {
            return Err(Error::Invalid(format!(
                "class '{name}' has no train samples"
            )));
        }
    }
    if test_idx.is_empty() {
        return Err(Error::Invalid("dataset has no test split".into()));
    }

    let size = dataset.images[0].width;
    let arch = Architecture::compact(dataset.class_names.len(), size);
    let mut model = CompactCnn::init(arch, dataset.class_names.clone(), cfg.rng_seed)?;
    let mut state = SgdState::new(&model);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.rng_seed.wrapping_add(1));

    let mut order: Vec<usize> = train_idx.clone();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let augmented: Vec<(ScalogramImage, usize)> = chunk
                .iter()
                .map(|&i| {
                    (
                        augment_task1(&dataset.images[i], cfg.augment_probability, &mut rng),
                        dataset.labels[i],
                    )
                })
                .collect();
            let batch: Vec<(&ScalogramImage, usize)> =
                augmented.iter().map(|(img, l)| (img, *l)).collect();
            backward_and_step(&mut model, &batch, cfg, &mut state)?;
        }
    }

    model.quantize_params();

    let mut pairs = Vec::with_capacity(test_idx.len());
    for &i in &test_idx {
        let predicted = model.predict_class(&dataset.images[i])?;
        pairs.push((dataset.labels[i], predicted));
    }
    let confusion = confusion_matrix_from_predictions(dataset.class_names.clone(), &pairs)?;
    Ok((model, confusion))
}
