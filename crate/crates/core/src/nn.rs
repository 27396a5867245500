//! A small convolutional softmax classifier trained from scratch.
//!
//! Supported layers: 3x3 stride-1 convolution with edge-replicated
//! padding, rectifier, 2x2 max-pool, flatten and fully-connected. A softmax
//! is always applied to the output of the final fully-connected layer.
//! All arithmetic is `f64`; activations are stored channel-major (CHW).
//!
//! Model files (`.mfm`, little-endian):
//!
//! ```text
//! "MFM1" | u16 width | u16 height | u8 channels | u8 0 | u32 layer count
//! layer count x ( u8 tag | u32 argument )
//! u64 parameter count | parameter count x f64 | u32 crc32(all preceding bytes)
//! ```
//!
//! Layer tags: 1 conv (out channels), 2 relu, 3 maxpool, 4 flatten,
//! 5 dense (units). Arguments are zero for parameterless layers.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{Image, Shape};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Layer {
    Conv { out_channels: usize },
    Relu,
    #[serde(rename = "maxpool")]
    MaxPool,
    Flatten,
    Dense { units: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

impl Architecture {
    /// conv 8 -> relu -> pool -> conv 16 -> relu -> pool -> dense 32 -> relu -> dense k
    pub fn default_cnn(input: Shape, classes: usize) -> Self {
        use Layer::*;
        Self {
            input,
            layers: vec![
                Conv { out_channels: 8 },
                Relu,
                MaxPool,
                Conv { out_channels: 16 },
                Relu,
                MaxPool,
                Flatten,
                Dense { units: 32 },
                Relu,
                Dense { units: classes },
            ],
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense { units }) => *units,
            _ => 0,
        }
    }

    /// Same layers with the output layer resized.
    pub fn with_classes(&self, classes: usize) -> Self {
        let mut arch = self.clone();
        if let Some(Layer::Dense { units }) = arch.layers.last_mut() {
            *units = classes;
        }
        arch
    }

    fn compile(&self) -> Result<Vec<LayerPlan>> {
        let bad = |msg: String| Err(Error::Config(format!("invalid architecture: {msg}")));
        if self.input.is_empty() {
            return bad("empty input shape".into());
        }
        match self.layers.last() {
            Some(Layer::Dense { units }) if *units >= 2 => {}
            _ => return bad("the last layer must be dense with at least 2 units".into()),
        }
        let mut dims = Dims::Spatial { c: self.input.channels, h: self.input.height, w: self.input.width };
        let mut offset = 0;
        let mut plans = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, params) = match (*layer, dims) {
                (Layer::Conv { out_channels }, Dims::Spatial { c, h, w }) if out_channels > 0 => {
                    (Dims::Spatial { c: out_channels, h, w }, out_channels * c * 9 + out_channels)
                }
                (Layer::Relu, d) => (d, 0),
                (Layer::MaxPool, Dims::Spatial { c, h, w }) if h >= 2 && w >= 2 => {
                    (Dims::Spatial { c, h: h / 2, w: w / 2 }, 0)
                }
                (Layer::Flatten, d) => (Dims::Flat(d.len()), 0),
                (Layer::Dense { units }, Dims::Flat(n)) if units > 0 => (Dims::Flat(units), units * n + units),
                (l, d) => return bad(format!("layer {i} ({l:?}) cannot follow output of shape {d:?}")),
            };
            plans.push(LayerPlan { layer: *layer, input: dims, output: out, offset, params });
            offset += params;
            dims = out;
        }
        Ok(plans)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.compile()?.iter().map(|p| p.params).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dims {
    Spatial { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Dims {
    fn len(&self) -> usize {
        match *self {
            Dims::Spatial { c, h, w } => c * h * w,
            Dims::Flat(n) => n,
        }
    }

    fn spatial(&self) -> (usize, usize, usize) {
        match *self {
            Dims::Spatial { c, h, w } => (c, h, w),
            Dims::Flat(n) => (n, 1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerPlan {
    layer: Layer,
    input: Dims,
    output: Dims,
    offset: usize,
    params: usize,
}

/// Trainable classifier: an architecture plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    plans: Vec<LayerPlan>,
    params: Vec<f64>,
}

enum Aux {
    None,
    Padded(Vec<f64>),
    Argmax(Vec<usize>),
}

/// Cached activations from one forward pass.
struct Trace {
    acts: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl Model {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        let plans = arch.compile()?;
        let n = plans.iter().map(|p| p.params).sum();
        Ok(Self { arch, plans, params: vec![0.0; n] })
    }

    /// He-style initialization: weights ~ N(0, 2 / fan_in), biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = rng_from_seed(seed);
        for plan in &model.plans {
            let (weights, fan_in) = match (plan.layer, plan.input) {
                (Layer::Conv { out_channels }, Dims::Spatial { c, .. }) => (out_channels * c * 9, c * 9),
                (Layer::Dense { units }, Dims::Flat(n)) => (units * n, n),
                _ => continue,
            };
            let std = (2.0 / fan_in as f64).sqrt();
            for w in &mut model.params[plan.offset..plan.offset + weights] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = std * z;
            }
        }
        Ok(model)
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        if params.len() != model.params.len() {
            return Err(Error::Dimension {
                expected: format!("{} parameters", model.params.len()),
                found: format!("{} parameters", params.len()),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_shape(&self) -> Shape {
        self.arch.input
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameters of one layer (empty for parameterless layers).
    pub fn layer_params(&self, index: usize) -> &[f64] {
        let p = &self.plans[index];
        &self.params[p.offset..p.offset + p.params]
    }

    /// CRC32 over the little-endian parameter bytes.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for p in &self.params {
            h.update(&p.to_le_bytes());
        }
        h.finalize()
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        if image.shape() != self.arch.input {
            return Err(Error::Dimension { expected: self.arch.input.to_string(), found: image.shape().to_string() });
        }
        Ok(())
    }

    /// Class probabilities for one image.
    pub fn predict(&self, image: &Image) -> Result<Vec<f64>> {
        self.check_input(image)?;
        let trace = self.forward(image);
        Ok(softmax(trace.acts.last().unwrap()))
    }

    /// Distance of this input from the nearest point where the network is
    /// not differentiable: the smallest |z| over rectifier inputs and the
    /// smallest winner-to-runner-up gap over pooling windows.
    pub fn kink_margin(&self, image: &Image) -> Result<f64> {
        self.check_input(image)?;
        let trace = self.forward(image);
        let mut margin = f64::INFINITY;
        for (i, plan) in self.plans.iter().enumerate() {
            let input = &trace.acts[i];
            match plan.layer {
                Layer::Relu => margin = input.iter().fold(margin, |m, z| m.min(z.abs())),
                Layer::MaxPool => {
                    let (c, h, w) = plan.input.spatial();
                    for ch in 0..c {
                        for y in (0..h - h % 2).step_by(2) {
                            for x in (0..w - w % 2).step_by(2) {
                                let mut v = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(dy, dx)| input[(ch * h + y + dy) * w + x + dx]);
                                v.sort_by(|a, b| b.total_cmp(a));
                                margin = margin.min(v[0] - v[1]);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(margin)
    }

    fn forward(&self, image: &Image) -> Trace {
        let mut acts = Vec::with_capacity(self.plans.len() + 1);
        let mut aux = Vec::with_capacity(self.plans.len());
        acts.push(to_chw(image));
        for plan in &self.plans {
            let input = acts.last().unwrap();
            let p = &self.params[plan.offset..plan.offset + plan.params];
            let (out, a) = match plan.layer {
                Layer::Conv { out_channels } => {
                    let (c, h, w) = plan.input.spatial();
                    let padded = pad_edges(input, c, h, w);
                    let out = conv_forward(&padded, p, c, out_channels, h, w);
                    (out, Aux::Padded(padded))
                }
                Layer::Relu => (input.iter().map(|&v| v.max(0.0)).collect(), Aux::None),
                Layer::MaxPool => {
                    let (c, h, w) = plan.input.spatial();
                    let (out, idx) = maxpool_forward(input, c, h, w);
                    (out, Aux::Argmax(idx))
                }
                Layer::Flatten => (input.clone(), Aux::None),
                Layer::Dense { units } => (dense_forward(input, p, units), Aux::None),
            };
            acts.push(out);
            aux.push(a);
        }
        Trace { acts, aux }
    }

    /// Accumulates `scale * d(loss)/d(params)` into `grad`, given the
    /// gradient of the loss with respect to the logits.
    fn backward(&self, trace: &Trace, logit_grad: Vec<f64>, scale: f64, grad: &mut [f64]) {
        let mut upstream: Vec<f64> = logit_grad.into_iter().map(|g| g * scale).collect();
        for (i, plan) in self.plans.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let output = &trace.acts[i + 1];
            let p = &self.params[plan.offset..plan.offset + plan.params];
            let g = &mut grad[plan.offset..plan.offset + plan.params];
            let need_input_grad = i > 0;
            upstream = match (plan.layer, &trace.aux[i]) {
                (Layer::Conv { out_channels }, Aux::Padded(padded)) => {
                    let (c, h, w) = plan.input.spatial();
                    conv_backward(padded, p, &upstream, g, c, out_channels, h, w, need_input_grad)
                }
                (Layer::Relu, _) => upstream.iter().zip(output).map(|(&d, &o)| if o > 0.0 { d } else { 0.0 }).collect(),
                (Layer::MaxPool, Aux::Argmax(idx)) => {
                    let mut d = vec![0.0; input.len()];
                    for (&src, &dv) in idx.iter().zip(&upstream) {
                        d[src] += dv;
                    }
                    d
                }
                (Layer::Flatten, _) => upstream,
                (Layer::Dense { units }, _) => dense_backward(input, p, &upstream, g, units, need_input_grad),
                _ => unreachable!("trace does not match layer plan"),
            };
        }
    }
}

fn to_chw(image: &Image) -> Vec<f64> {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let px = image.pixels();
    let mut out = vec![0.0; px.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + x] = px[(y * w + x) * c + ch];
            }
        }
    }
    out
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Surrounds each channel with a one-pixel border copied from the nearest edge.
fn pad_edges(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for py in 0..ph {
            let sy = py.saturating_sub(1).min(h - 1);
            let src = &input[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            let dst = &mut out[(ch * ph + py) * pw..(ch * ph + py + 1) * pw];
            dst[1..=w].copy_from_slice(src);
            dst[0] = src[0];
            dst[w + 1] = src[w - 1];
        }
    }
    out
}

fn conv_forward(padded: &[f64], p: &[f64], c: usize, co: usize, h: usize, w: usize) -> Vec<f64> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let (weights, bias) = p.split_at(co * c * 9);
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        let dst = &mut out[o * h * w..(o + 1) * h * w];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..c {
            let src = &padded[i * plane..(i + 1) * plane];
            let k = &weights[(o * c + i) * 9..(o * c + i + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wt = k[ky * 3 + kx];
                    for y in 0..h {
                        let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        axpy(wt, row, &mut dst[y * w..(y + 1) * w]);
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    padded: &[f64],
    p: &[f64],
    upstream: &[f64],
    g: &mut [f64],
    c: usize,
    co: usize,
    h: usize,
    w: usize,
    need_input_grad: bool,
) -> Vec<f64> {
    let pw = w + 2;
    let ph = h + 2;
    let plane = ph * pw;
    let (weights, _) = p.split_at(co * c * 9);
    let (gw, gb) = g.split_at_mut(co * c * 9);
    let mut dpad = if need_input_grad { vec![0.0; c * plane] } else { Vec::new() };
    for o in 0..co {
        let d_out = &upstream[o * h * w..(o + 1) * h * w];
        gb[o] += d_out.iter().sum::<f64>();
        for i in 0..c {
            let src = &padded[i * plane..(i + 1) * plane];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = (o * c + i) * 9 + ky * 3 + kx;
                    let mut acc = 0.0;
                    for y in 0..h {
                        let off = (y + ky) * pw + kx;
                        acc += dot(&src[off..off + w], &d_out[y * w..(y + 1) * w]);
                    }
                    gw[widx] += acc;
                    if need_input_grad {
                        let wt = weights[widx];
                        let dsrc = &mut dpad[i * plane..(i + 1) * plane];
                        for y in 0..h {
                            let off = (y + ky) * pw + kx;
                            axpy(wt, &d_out[y * w..(y + 1) * w], &mut dsrc[off..off + w]);
                        }
                    }
                }
            }
        }
    }
    if !need_input_grad {
        return Vec::new();
    }
    // Fold border gradients back onto the edge pixels they replicate.
    let mut dx = vec![0.0; c * h * w];
    for i in 0..c {
        for py in 0..ph {
            let sy = py.saturating_sub(1).min(h - 1);
            for px in 0..pw {
                let sx = px.saturating_sub(1).min(w - 1);
                dx[(i * h + sy) * w + sx] += dpad[i * plane + py * pw + px];
            }
        }
    }
    dx
}

fn maxpool_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = (ch * h + 2 * y) * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = (ch * h + 2 * y + dy) * w + 2 * x + dx;
                    if input[j] > input[best] {
                        best = j;
                    }
                }
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

fn dense_forward(input: &[f64], p: &[f64], units: usize) -> Vec<f64> {
    let n = input.len();
    let (weights, bias) = p.split_at(units * n);
    (0..units).map(|u| bias[u] + dot(&weights[u * n..(u + 1) * n], input)).collect()
}

fn dense_backward(input: &[f64], p: &[f64], upstream: &[f64], g: &mut [f64], units: usize, need_input_grad: bool) -> Vec<f64> {
    let n = input.len();
    let (weights, _) = p.split_at(units * n);
    let (gw, gb) = g.split_at_mut(units * n);
    let mut dx = if need_input_grad { vec![0.0; n] } else { Vec::new() };
    for u in 0..units {
        let d = upstream[u];
        gb[u] += d;
        if d == 0.0 {
            continue;
        }
        axpy(d, input, &mut gw[u * n..(u + 1) * n]);
        if need_input_grad {
            axpy(d, &weights[u * n..(u + 1) * n], &mut dx);
        }
    }
    dx
}

/// Mean cross-entropy over the batch and its gradient with respect to
/// every parameter.
pub fn loss_and_grads(model: &Model, images: &[&Image], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::Config(format!(
            "batch needs matching non-empty images and labels, got {} and {}",
            images.len(),
            labels.len()
        )));
    }
    let k = model.classes();
    let mut grad = vec![0.0; model.params.len()];
    let scale = 1.0 / images.len() as f64;
    let mut loss = 0.0;
    for (img, &label) in images.iter().zip(labels) {
        model.check_input(img)?;
        if label >= k {
            return Err(Error::LabelRange { label, classes: k });
        }
        let trace = model.forward(img);
        let mut probs = softmax(trace.acts.last().unwrap());
        loss -= probs[label].max(f64::MIN_POSITIVE).ln();
        probs[label] -= 1.0;
        model.backward(&trace, probs, scale, &mut grad);
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, momentum: 0.9, batch_size: 32, epochs: 10, seed: 0, init: "he-normal".into() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.init != "he-normal" {
            return Err(Error::Config(format!("unknown init scheme {:?}", self.init)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: Model,
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD with momentum on mean cross-entropy. Single-threaded so
/// results are bit-identical for identical inputs.
pub fn train(images: &[&Image], labels: &[usize], arch: &Architecture, config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::Config("training needs a non-empty dataset with one label per image".into()));
    }
    let mut model = Model::init(arch.clone(), crate::seed::derive_seed(config.seed, "init"))?;
    let k = model.classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelRange { label, classes: k });
    }
    for img in images {
        model.check_input(img)?;
    }
    let mut rng = rng_from_seed(crate::seed::derive_seed(config.seed, "shuffle"));
    let mut velocity = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Image> = chunk.iter().map(|&i| images[i]).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = loss_and_grads(&model, &batch, &batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, learning_rate: config.learning_rate, loss });
            }
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, learning_rate: config.learning_rate, loss: mean });
        }
        epoch_losses.push(mean);
    }
    Ok(Trained { model, epoch_losses })
}

// ---------------------------------------------------------------------------
// Model files

const MODEL_MAGIC: &[u8; 4] = b"MFM1";

fn layer_code(layer: Layer) -> (u8, u32) {
    match layer {
        Layer::Conv { out_channels } => (1, out_channels as u32),
        Layer::Relu => (2, 0),
        Layer::MaxPool => (3, 0),
        Layer::Flatten => (4, 0),
        Layer::Dense { units } => (5, units as u32),
    }
}

pub fn write_model(model: &Model) -> Result<Vec<u8>> {
    let s = model.arch.input;
    let fits16 = |v: usize| u16::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit the model header")));
    let mut out = Vec::with_capacity(32 + 5 * model.plans.len() + 8 * model.params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&fits16(s.width)?.to_le_bytes());
    out.extend_from_slice(&fits16(s.height)?.to_le_bytes());
    out.push(u8::try_from(s.channels).map_err(|_| Error::Config("too many channels".into()))?);
    out.push(0);
    out.extend_from_slice(&(model.arch.layers.len() as u32).to_le_bytes());
    for layer in &model.arch.layers {
        let (tag, arg) = layer_code(*layer);
        out.push(tag);
        out.extend_from_slice(&arg.to_le_bytes());
    }
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn read_model(bytes: &[u8]) -> Result<Model> {
    let need = |at: usize, n: usize| {
        if bytes.len() < at + n {
            Err(Error::format(bytes.len(), "truncated model file"))
        } else {
            Ok(&bytes[at..at + n])
        }
    };
    if need(0, 4)? != MODEL_MAGIC {
        return Err(Error::format(0, "bad model magic"));
    }
    if bytes.len() < 4 {
        return Err(Error::format(0, "truncated model file"));
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..body_len]);
    if stored != actual {
        return Err(Error::Checksum { expected: stored, actual });
    }
    let u16_at = |at: usize| -> Result<usize> { Ok(usize::from(u16::from_le_bytes(need(at, 2)?.try_into().unwrap()))) };
    let width = u16_at(4)?;
    let height = u16_at(6)?;
    let channels = usize::from(need(8, 1)?[0]);
    let layer_count = u32::from_le_bytes(need(10, 4)?.try_into().unwrap()) as usize;
    let mut pos = 14;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let rec = need(pos, 5)?;
        let arg = u32::from_le_bytes(rec[1..5].try_into().unwrap()) as usize;
        layers.push(match rec[0] {
            1 => Layer::Conv { out_channels: arg },
            2 => Layer::Relu,
            3 => Layer::MaxPool,
            4 => Layer::Flatten,
            5 => Layer::Dense { units: arg },
            t => return Err(Error::format(pos, format!("unknown layer tag {t}"))),
        });
        pos += 5;
    }
    let count = u64::from_le_bytes(need(pos, 8)?.try_into().unwrap()) as usize;
    pos += 8;
    if pos + 8 * count != body_len {
        return Err(Error::format(pos, format!("expected {count} parameters, file size disagrees")));
    }
    let params = bytes[pos..body_len].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Model::from_params(Architecture { input: Shape::new(width, height, channels), layers }, params)
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, write_model(model)?).map_err(|e| Error::file(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    read_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture {
            input: Shape::new(4, 4, 2),
            layers: vec![
                Layer::Conv { out_channels: 2 },
                Layer::Relu,
                Layer::MaxPool,
                Layer::Flatten,
                Layer::Dense { units: 3 },
            ],
        }
    }

    #[test]
    fn parameter_arithmetic() {
        // conv 2*2*9+2 = 38, dense 3*(2*2*2)+3 = 27
        assert_eq!(tiny_arch().parameter_count().unwrap(), 65);
        let d = Architecture::default_cnn(Shape::new(32, 32, 3), 7);
        let expected = (8 * 27 + 8) + (16 * 72 + 16) + (32 * 1024 + 32) + (7 * 32 + 7);
        assert_eq!(d.parameter_count().unwrap(), expected);
    }

    #[test]
    fn invalid_architectures() {
        let mut a = tiny_arch();
        a.layers.pop();
        assert!(a.parameter_count().is_err());
        let a = Architecture { input: Shape::new(4, 4, 1), layers: vec![Layer::Dense { units: 2 }] };
        assert!(a.parameter_count().is_err());
        let a = Architecture {
            input: Shape::new(1, 1, 1),
            layers: vec![Layer::MaxPool, Layer::Flatten, Layer::Dense { units: 2 }],
        };
        assert!(a.parameter_count().is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Model::zeros(tiny_arch()).unwrap();
        let img = Image::new(4, 4, 2, (0..32).map(|i| i as f64 / 32.0).collect()).unwrap();
        let p = m.predict(&img).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let (loss, _) = loss_and_grads(&m, &[&img], &[1]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_model_has_zero_loss() {
        let arch = Architecture {
            input: Shape::new(1, 1, 1),
            layers: vec![Layer::Flatten, Layer::Dense { units: 2 }],
        };
        // logits = (0, 800) regardless of input
        let m = Model::from_params(arch, vec![0.0, 0.0, 0.0, 800.0]).unwrap();
        let img = Image::new(1, 1, 1, vec![0.5]).unwrap();
        let (loss, grad) = loss_and_grads(&m, &[&img, &img], &[1, 1]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| g.abs() < 1e-300));
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn input_shape_is_checked() {
        let m = Model::zeros(tiny_arch()).unwrap();
        let wrong = Image::filled(3, 3, &[0.0, 0.0]).unwrap();
        assert!(matches!(m.predict(&wrong), Err(Error::Dimension { .. })));
    }

    #[test]
    fn edge_padding_replicates() {
        let input = vec![1.0, 2.0, 3.0, 4.0];
        let p = pad_edges(&input, 1, 2, 2);
        #[rustfmt::skip]
        let expected = vec![
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(p, expected);
    }

    fn refs(images: &[Image]) -> Vec<&Image> {
        images.iter().collect()
    }

    fn separable_toy() -> (Vec<Image>, Vec<usize>) {
        let pts = [(0.1, 0.2, 0), (0.2, 0.1, 0), (0.8, 0.9, 1), (0.9, 0.7, 1)];
        let images = pts.iter().map(|&(a, b, _)| Image::new(2, 1, 1, vec![a, b]).unwrap()).collect();
        (images, pts.iter().map(|p| p.2).collect())
    }

    fn dense_only() -> Architecture {
        Architecture {
            input: Shape::new(2, 1, 1),
            layers: vec![Layer::Flatten, Layer::Dense { units: 8 }, Layer::Relu, Layer::Dense { units: 2 }],
        }
    }

    #[test]
    fn learns_separable_toy() {
        let (images, labels) = separable_toy();
        let cfg = TrainConfig { learning_rate: 0.1, batch_size: 4, epochs: 200, seed: 3, ..Default::default() };
        let trained = train(&refs(&images), &labels, &dense_only(), &cfg).unwrap();
        let correct = images
            .iter()
            .zip(&labels)
            .filter(|(img, &l)| argmax(&trained.model.predict(img).unwrap()) == l)
            .count();
        assert_eq!(correct, 4);
        assert!(trained.epoch_losses.last().unwrap() < trained.epoch_losses.first().unwrap());
    }

    #[test]
    fn zero_epochs_is_initialization_and_training_is_deterministic() {
        let (images, labels) = separable_toy();
        let cfg = TrainConfig { epochs: 0, seed: 11, ..Default::default() };
        let t = train(&refs(&images), &labels, &dense_only(), &cfg).unwrap();
        assert!(t.epoch_losses.is_empty());
        let init = Model::init(dense_only(), crate::seed::derive_seed(11, "init")).unwrap();
        assert_eq!(t.model, init);

        let cfg = TrainConfig { epochs: 5, batch_size: 2, seed: 11, ..Default::default() };
        let a = train(&refs(&images), &labels, &dense_only(), &cfg).unwrap();
        let b = train(&refs(&images), &labels, &dense_only(), &cfg).unwrap();
        assert_eq!(a.model.checksum(), b.model.checksum());
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn divergence_is_reported() {
        let (images, labels) = separable_toy();
        let cfg = TrainConfig { learning_rate: 1e200, epochs: 3, momentum: 0.0, ..Default::default() };
        let err = train(&refs(&images), &labels, &dense_only(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn model_file_round_trip_and_corruption() {
        let m = Model::init(tiny_arch(), 5).unwrap();
        let bytes = write_model(&m).unwrap();
        let back = read_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                   m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>());
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(read_model(&bad), Err(Error::Checksum { .. })));
        assert!(read_model(b"MFM").is_err());
    }
}
