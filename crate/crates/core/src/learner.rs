//! The shared model: a fully connected ReLU network with a softmax output,
//! stored as one flat parameter vector so it can be averaged and shipped as-is.
//!
//! Parameter order is, layer by layer, the weight matrix (row-major,
//! `out x in`) followed by the bias vector.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::datagen::Dataset;
use crate::{Error, Result};

/// Layer widths, input first, class count last.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Layout {
    dims: Vec<usize>,
}

impl Layout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("layout", "need at least input and output widths"));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("layout", "layer widths must be positive"));
        }
        Ok(Self { dims })
    }

    /// `input -> hidden... -> classes`
    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(classes);
        Self::new(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.dims.last().expect("layout has >= 2 dims")
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Size of the model on the wire at 64 bits per parameter.
    pub fn serialized_bits(&self) -> u64 {
        self.num_params() as u64 * 64
    }

    /// `(weights_offset, bias_offset, in, out)` for each layer.
    fn offsets(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut at = 0;
        self.dims.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wo = at;
            let bo = wo + fan_in * fan_out;
            at = bo + fan_out;
            (wo, bo, fan_in, fan_out)
        })
    }
}

impl core::fmt::Display for Layout {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.num_params() {
            return Err(Error::LayoutMismatch {
                expected: layout.num_params(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("model parameters", "all entries must be finite"));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let values = alloc::vec![0.0; layout.num_params()];
        Self { layout, values }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            local_epochs: 3,
            batch_size: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Mean cross-entropy (nats).
    pub loss: f64,
    /// Top-1 accuracy in [0, 1].
    pub accuracy: f64,
}

/// Glorot-uniform weights, zero biases.
pub fn init_model<R: Rng + ?Sized>(layout: &Layout, rng: &mut R) -> ModelParams {
    let mut values = alloc::vec![0.0; layout.num_params()];
    for (wo, _bo, fan_in, fan_out) in layout.offsets() {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        for v in &mut values[wo..wo + fan_in * fan_out] {
            *v = rng.random_range(-limit..limit);
        }
    }
    ModelParams {
        layout: layout.clone(),
        values,
    }
}

fn check_dims(model: &ModelParams, data: &Dataset) -> Result<()> {
    if model.layout.input_dim() != data.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.layout.input_dim(),
            actual: data.feature_dim(),
        });
    }
    if model.layout.num_classes() < data.num_classes() {
        return Err(Error::invalid(
            "layout",
            format!(
                "{} outputs cannot cover {} classes",
                model.layout.num_classes(),
                data.num_classes()
            ),
        ));
    }
    Ok(())
}

/// Activations of every layer for one input; the last entry holds logits.
fn forward(model: &ModelParams, x: &[f64], acts: &mut Vec<Vec<f64>>) {
    let layers = model.layout.num_layers();
    acts.resize_with(layers + 1, Vec::new);
    acts[0].clear();
    acts[0].extend_from_slice(x);
    for (l, (wo, bo, fan_in, fan_out)) in model.layout.offsets().enumerate() {
        let (prev, rest) = acts.split_at_mut(l + 1);
        let input = &prev[l];
        let out = &mut rest[0];
        out.clear();
        let w = &model.values[wo..wo + fan_in * fan_out];
        let b = &model.values[bo..bo + fan_out];
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let mut z = b[o];
            for (wi, xi) in row.iter().zip(input.iter()) {
                z += wi * xi;
            }
            if l + 1 < layers && z < 0.0 {
                z = 0.0;
            }
            out.push(z);
        }
    }
}

/// `log(sum(exp(z)))`, shifted by the max for stability.
fn log_sum_exp(z: &[f64]) -> (f64, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| libm::exp(v - max)).sum();
    (max, max + libm::log(s))
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy and top-1 accuracy over `indices` (all samples when `None`).
pub fn evaluate(model: &ModelParams, data: &Dataset, indices: Option<&[usize]>) -> Result<EvalResult> {
    check_dims(model, data)?;
    let n = indices.map_or(data.len(), <[usize]>::len);
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mut acts = Vec::new();
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut visit = |i: usize| {
        forward(model, data.features(i), &mut acts);
        let logits = acts.last().expect("forward fills every layer");
        let (_, lse) = log_sum_exp(logits);
        let y = data.label(i);
        loss += lse - logits[y];
        if argmax(logits) == y {
            correct += 1;
        }
    };
    match indices {
        Some(idx) => idx.iter().for_each(|&i| visit(i)),
        None => (0..n).for_each(&mut visit),
    }
    Ok(EvalResult {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}

/// Mean cross-entropy over `indices` and its gradient with respect to every parameter.
pub fn loss_and_grad(model: &ModelParams, data: &Dataset, indices: &[usize]) -> Result<(f64, Vec<f64>)> {
    check_dims(model, data)?;
    if indices.is_empty() {
        return Err(Error::EmptyData);
    }
    let layout = &model.layout;
    let offsets: Vec<_> = layout.offsets().collect();
    let mut grad = alloc::vec![0.0; layout.num_params()];
    let mut acts = Vec::new();
    let mut delta: Vec<f64> = Vec::new();
    let mut prev_delta: Vec<f64> = Vec::new();
    let mut loss = 0.0;
    for &i in indices {
        forward(model, data.features(i), &mut acts);
        let y = data.label(i);
        let logits = acts.last().expect("forward fills every layer");
        let (_, lse) = log_sum_exp(logits);
        loss += lse - logits[y];
        // dL/dz at the output: softmax - onehot
        delta.clear();
        delta.extend(logits.iter().map(|z| libm::exp(z - lse)));
        delta[y] -= 1.0;
        for l in (0..offsets.len()).rev() {
            let (wo, bo, fan_in, fan_out) = offsets[l];
            let input = &acts[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[bo + o] += d;
                let g = &mut grad[wo + o * fan_in..wo + (o + 1) * fan_in];
                for (gi, xi) in g.iter_mut().zip(input.iter()) {
                    *gi += d * xi;
                }
            }
            if l > 0 {
                prev_delta.clear();
                prev_delta.resize(fan_in, 0.0);
                let w = &model.values[wo..wo + fan_in * fan_out];
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (pd, wi) in prev_delta.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *pd += d * wi;
                    }
                }
                // ReLU derivative of the hidden layer that produced `input`
                for (pd, a) in prev_delta.iter_mut().zip(input.iter()) {
                    if *a <= 0.0 {
                        *pd = 0.0;
                    }
                }
                core::mem::swap(&mut delta, &mut prev_delta);
            }
        }
    }
    let scale = 1.0 / indices.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

/// `local_epochs` passes of mini-batch SGD over `shard`.
///
/// Each epoch visits the shard in a fresh random order. Indices inside a batch
/// are sorted before the gradient is accumulated, so the update depends only
/// on which samples form the batch.
pub fn local_update<R: Rng + ?Sized>(
    model: &ModelParams,
    data: &Dataset,
    shard: &[usize],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ModelParams> {
    cfg.validate()?;
    if shard.is_empty() {
        return Err(Error::EmptyData);
    }
    check_dims(model, data)?;
    let mut out = model.clone();
    let mut order = shard.to_vec();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.learning_rate == 0.0 {
                continue;
            }
            batch.clear();
            batch.extend_from_slice(chunk);
            batch.sort_unstable();
            let (_, grad) = loss_and_grad(&out, data, &batch)?;
            for (w, g) in out.values.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
            if out.values.iter().any(|w| !w.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
        }
    }
    Ok(out)
}

/// Averages a node's own model with the models it received.
///
/// Each coordinate is averaged over the sorted multiset of values as
/// `min + sum(v - min) / (R + 1)`, which makes the result independent of the
/// order models arrived in and exact when all inputs agree.
pub fn fed_average(own: &ModelParams, received: &[&ModelParams]) -> Result<ModelParams> {
    for m in received {
        if m.layout != own.layout {
            return Err(Error::LayoutMismatch {
                expected: own.layout.num_params(),
                actual: m.layout.num_params(),
            });
        }
    }
    if received.is_empty() {
        return Ok(own.clone());
    }
    let count = (received.len() + 1) as f64;
    let mut column = Vec::with_capacity(received.len() + 1);
    let values = (0..own.values.len())
        .map(|j| {
            column.clear();
            column.push(own.values[j]);
            column.extend(received.iter().map(|m| m.values[j]));
            column.sort_unstable_by(f64::total_cmp);
            let base = column[0];
            let spread: f64 = column[1..].iter().map(|v| v - base).sum();
            base + spread / count
        })
        .collect();
    Ok(ModelParams {
        layout: own.layout.clone(),
        values,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"OCDFLCK1";

/// Checkpoint bytes: magic, `u32` layer-dim count, the dims as `u32`, a `u64`
/// parameter count, then the parameters as `f64`; all little-endian.
pub fn encode_checkpoint(model: &ModelParams) -> Vec<u8> {
    let dims = model.layout.dims();
    let mut out = Vec::with_capacity(8 + 4 + 4 * dims.len() + 8 + 8 * model.values.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.values.len() as u64).to_le_bytes());
    for v in &model.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let err = |reason: String| Error::Format {
        what: String::from("checkpoint"),
        reason,
    };
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(at..at + n)
            .ok_or_else(|| err(format!("truncated at byte {at}")))?;
        at += n;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(err(String::from("bad magic")));
    }
    let n_dims = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize);
    }
    let layout = Layout::new(dims)?;
    let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    if n != layout.num_params() {
        return Err(Error::LayoutMismatch {
            expected: layout.num_params(),
            actual: n,
        });
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
    }
    if at != bytes.len() {
        return Err(err(format!("{} trailing bytes", bytes.len() - at)));
    }
    ModelParams::from_values(layout, values)
}
