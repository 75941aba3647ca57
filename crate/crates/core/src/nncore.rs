//! Feed-forward ReLU classifier with exact reverse-mode gradients and
//! seeded mini-batch SGD.
//!
//! Parameters live in one flat `Vec<f64>`. Layer `l` stores its weight
//! matrix row-major (`out × in`) followed by its bias vector, layers in
//! input-to-output order. All reductions run in a fixed index order, so a
//! training run is bit-reproducible on one platform.

use serde::{Deserialize, Serialize};

use crate::datagen::{LabelMode, LabeledExample};
use crate::error::{Error, Result};
use crate::seedkit::{derive_stream, RngStream, Seed};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub n_classes: usize,
}

#[derive(Clone, Copy, Debug)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn end(&self) -> usize {
        self.offset + (self.fan_in + 1) * self.fan_out
    }
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, n_classes: usize) -> Result<Self> {
        let arch = Architecture {
            input_dim,
            hidden_dims,
            n_classes,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("arch.input_dim", "must be at least 1"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("arch.n_classes", "must be at least 2"));
        }
        if let Some(k) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::config(format!("arch.hidden_dims[{k}]"), "must be at least 1"));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.n_classes);
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset = shape.end();
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map_or(0, LayerShape::end)
    }

    /// `true` at every flat index holding a weight (not a bias).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.param_count()];
        for layer in self.layers() {
            mask[layer.weights()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }
}

/// Parameters (or a gradient) for an [`Architecture`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: &Architecture) -> Self {
        ModelParams {
            values: vec![0.0; arch.param_count()],
            arch: arch.clone(),
        }
    }

    pub fn from_values(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        Ok(ModelParams {
            arch: arch.clone(),
            values,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Weight matrix (row-major, `out × in`) and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let shape = self.arch.layers()[l];
        (&self.values[shape.weights()], &self.values[shape.bias()])
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let shape = self.arch.layers()[l];
        let (w, b) = self.values[shape.offset..shape.end()].split_at_mut(shape.fan_in * shape.fan_out);
        (w, b)
    }

    pub fn n_layers(&self) -> usize {
        self.arch.hidden_dims.len() + 1
    }
}

/// He-normal weights, zero biases.
pub fn init_params(arch: &Architecture, stream: &mut RngStream) -> ModelParams {
    let mut params = ModelParams::zeros(arch);
    for layer in arch.layers() {
        let scale = (2.0 / layer.fan_in as f64).sqrt();
        let draws = stream.draw_gaussian(layer.fan_in * layer.fan_out);
        for (w, z) in params.values[layer.weights()].iter_mut().zip(draws) {
            *w = scale * z;
        }
    }
    params
}

/// Layer outputs for one input: `acts[0]` is the input, `acts[l + 1]` the
/// output of layer `l` (rectified for hidden layers, raw logits last).
fn forward_cached(params: &ModelParams, features: &[f64]) -> Vec<Vec<f64>> {
    let layers = params.arch.layers();
    let last = layers.len() - 1;
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
    acts.push(features.to_vec());
    for (l, shape) in layers.iter().enumerate() {
        let w = &params.values[shape.weights()];
        let b = &params.values[shape.bias()];
        let x = &acts[l];
        let mut z: Vec<f64> = (0..shape.fan_out)
            .map(|o| {
                let row = &w[o * shape.fan_in..(o + 1) * shape.fan_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(x) {
                    s += wi * xi;
                }
                s
            })
            .collect();
        if l < last {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    acts
}

fn check_input(params: &ModelParams, features: &[f64]) -> Result<()> {
    if features.len() != params.arch.input_dim {
        return Err(Error::DimensionMismatch {
            expected: params.arch.input_dim,
            got: features.len(),
        });
    }
    Ok(())
}

pub fn forward(params: &ModelParams, features: &[f64]) -> Result<Vec<f64>> {
    check_input(params, features)?;
    Ok(forward_cached(params, features).pop().expect("at least one layer"))
}

/// Accumulates `scale · ∂(dlogits · logits)/∂θ` into `grad` and returns the
/// gradient with respect to the input.
fn backward(params: &ModelParams, acts: &[Vec<f64>], dlogits: &[f64], scale: f64, grad: &mut [f64]) -> Vec<f64> {
    let layers = params.arch.layers();
    let mut delta = dlogits.to_vec();
    for (l, shape) in layers.iter().enumerate().rev() {
        let x = &acts[l];
        let w = &params.values[shape.weights()];
        {
            let gw = &mut grad[shape.weights()];
            for (o, d) in delta.iter().enumerate() {
                let sd = scale * d;
                let row = &mut gw[o * shape.fan_in..(o + 1) * shape.fan_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += sd * xi;
                }
            }
        }
        for (g, d) in grad[shape.bias()].iter_mut().zip(&delta) {
            *g += scale * d;
        }
        let mut dx = vec![0.0; shape.fan_in];
        for (o, d) in delta.iter().enumerate() {
            let row = &w[o * shape.fan_in..(o + 1) * shape.fan_in];
            for (dxi, wi) in dx.iter_mut().zip(row) {
                *dxi += wi * d;
            }
        }
        if l > 0 {
            // x is a rectified hidden activation here
            for (dxi, xi) in dx.iter_mut().zip(x) {
                if *xi <= 0.0 {
                    *dxi = 0.0;
                }
            }
        }
        delta = dx;
    }
    delta
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Per-example objective.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    /// Softmax cross-entropy against a class id.
    Class(usize),
    /// `KL(student ‖ teacher)` given the teacher's log-probabilities.
    KlTo(&'a [f64]),
    /// `½‖logits‖²`, label-free.
    OutputNorm,
}

/// Loss and `∂loss/∂logits` for one example.
fn head(logits: &[f64], target: Target<'_>) -> (f64, Vec<f64>) {
    match target {
        Target::Class(y) => {
            let logp = log_softmax(logits);
            let d = logp
                .iter()
                .enumerate()
                .map(|(k, lp)| lp.exp() - if k == y { 1.0 } else { 0.0 })
                .collect();
            (-logp[y], d)
        }
        Target::KlTo(teacher_logp) => {
            let logp = log_softmax(logits);
            let p: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
            let a: Vec<f64> = logp.iter().zip(teacher_logp).map(|(s, t)| s - t).collect();
            let kl: f64 = p.iter().zip(&a).map(|(pi, ai)| pi * ai).sum();
            let d = p.iter().zip(&a).map(|(pi, ai)| pi * (ai - kl)).collect();
            (kl, d)
        }
        Target::OutputNorm => {
            let loss = 0.5 * logits.iter().map(|z| z * z).sum::<f64>();
            (loss, logits.to_vec())
        }
    }
}

/// Mean per-example loss plus `(l2/2)·‖weights‖²`, and its exact gradient.
/// Examples are summed in iteration order.
pub fn objective_and_grad<'a, I>(params: &ModelParams, items: I, l2: f64) -> Result<(f64, ModelParams)>
where
    I: IntoIterator<Item = (&'a [f64], Target<'a>)>,
{
    let mut grad = ModelParams::zeros(&params.arch);
    let mut total = 0.0;
    let mut n = 0usize;
    for (x, target) in items {
        check_input(params, x)?;
        let acts = forward_cached(params, x);
        let (loss, d) = head(acts.last().expect("logits"), target);
        total += loss;
        backward(params, &acts, &d, 1.0, &mut grad.values);
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("objective over an empty batch".into()));
    }
    let inv = 1.0 / n as f64;
    grad.values.iter_mut().for_each(|g| *g *= inv);
    let mut loss = total * inv;
    if l2 != 0.0 {
        let mut sq = 0.0;
        for layer in params.arch.layers() {
            for (g, w) in grad.values[layer.weights()]
                .iter_mut()
                .zip(&params.values[layer.weights()])
            {
                sq += w * w;
                *g += l2 * w;
            }
        }
        loss += 0.5 * l2 * sq;
    }
    Ok((loss, grad))
}

/// Mean cross-entropy over `batch` plus L2 on weights, with its gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[LabeledExample],
    label_mode: LabelMode,
    l2: f64,
) -> Result<(f64, ModelParams)> {
    objective_and_grad(
        params,
        batch
            .iter()
            .map(|e| (e.features.as_slice(), Target::Class(e.label(label_mode)))),
        l2,
    )
}

/// Per-example gradient of the unregularised objective.
pub fn example_grad(params: &ModelParams, x: &[f64], target: Target<'_>) -> Result<(f64, ModelParams)> {
    objective_and_grad(params, std::iter::once((x, target)), 0.0)
}

/// Gradient of the per-example objective with respect to the input.
pub fn input_grad(params: &ModelParams, x: &[f64], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
    check_input(params, x)?;
    let acts = forward_cached(params, x);
    let (loss, d) = head(acts.last().expect("logits"), target);
    let mut scratch = vec![0.0; params.len()];
    Ok((loss, backward(params, &acts, &d, 1.0, &mut scratch)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.9,
            l2: 5e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be a positive real"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::config("train.l2", "must be a nonnegative real"));
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v ← μv + g`, `θ ← θ − ηv`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(n_params: usize, learning_rate: f64, momentum: f64) -> Self {
        Sgd {
            learning_rate,
            momentum,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) {
        for ((p, v), g) in params.values.iter_mut().zip(&mut self.velocity).zip(&grad.values) {
            *v = self.momentum * *v + g;
            *p -= self.learning_rate * *v;
        }
    }
}

/// Runs `epochs` passes of mini-batch SGD over `n_items` items. Each epoch
/// draws a fresh permutation from `order`; the final partial batch is kept.
/// `batch_grad(params, epoch, indices)` supplies the gradient of a batch.
pub fn run_sgd<F>(
    params: &mut ModelParams,
    n_items: usize,
    epochs: usize,
    batch_size: usize,
    sgd: &mut Sgd,
    order: &mut RngStream,
    mut batch_grad: F,
) -> Result<()>
where
    F: FnMut(&ModelParams, usize, &[usize]) -> Result<ModelParams>,
{
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    for epoch in 0..epochs {
        let perm = order.shuffle((0..n_items).collect::<Vec<_>>());
        for chunk in perm.chunks(batch_size) {
            let grad = batch_grad(params, epoch, chunk)?;
            sgd.step(params, &grad);
        }
    }
    Ok(())
}

/// Trains from a seeded initialisation. Streams: `init` for the weights,
/// `order` for per-epoch example order.
pub fn train(
    arch: &Architecture,
    train_set: &[LabeledExample],
    config: &TrainConfig,
    label_mode: LabelMode,
    seed: Seed,
) -> Result<ModelParams> {
    arch.validate()?;
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::UndefinedMetric("training on an empty set".into()));
    }
    let mut params = init_params(arch, &mut derive_stream(seed, "init"));
    let mut order = derive_stream(seed, "order");
    let mut sgd = Sgd::new(params.len(), config.learning_rate, config.momentum);
    let mut batch = Vec::with_capacity(config.batch_size);
    run_sgd(
        &mut params,
        train_set.len(),
        config.epochs,
        config.batch_size,
        &mut sgd,
        &mut order,
        |p, _, idx| {
            batch.clear();
            batch.extend(idx.iter().map(|&i| &train_set[i]));
            objective_and_grad(
                p,
                batch
                    .iter()
                    .map(|e| (e.features.as_slice(), Target::Class(e.label(label_mode)))),
                config.l2,
            )
            .map(|(_, g)| g)
        },
    )?;
    Ok(params)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = k;
        }
    }
    best
}

pub fn predict(params: &ModelParams, features: &[f64]) -> Result<usize> {
    forward(params, features).map(|z| argmax(&z))
}

/// Fraction of correctly classified examples. Empty input is an error.
pub fn accuracy(params: &ModelParams, examples: &[LabeledExample], label_mode: LabelMode) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("accuracy over an empty set".into()));
    }
    let mut correct = 0usize;
    for e in examples {
        if predict(params, &e.features)? == e.label(label_mode) {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"UNLBCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: magic, version, architecture (all `u32` LE), parameter
/// count (`u64` LE), then each parameter as `f64` LE in flat order.
pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let arch = &params.arch;
    let mut out = Vec::with_capacity(32 + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arch.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(arch.hidden_dims.len() as u32).to_le_bytes());
    for &h in &arch.hidden_dims {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(arch.n_classes as u32).to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut cur = Cursor { bytes };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let input_dim = cur.u32()?;
    let n_hidden = cur.u32()?;
    let hidden_dims = (0..n_hidden).map(|_| cur.u32()).collect::<Result<Vec<_>>>()?;
    let n_classes = cur.u32()?;
    let arch = Architecture::new(input_dim, hidden_dims, n_classes)
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    let count = cur.u64()? as usize;
    if count != arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let values = (0..count)
        .map(|_| cur.u64().map(f64::from_bits))
        .collect::<Result<Vec<_>>>()?;
    if !cur.bytes.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    ModelParams::from_values(&arch, values)
}
