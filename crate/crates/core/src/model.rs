//! Small differentiable classifiers with exact per-sample gradients.
//!
//! Two architectures are supported, both trained with softmax cross-entropy:
//!
//! * `LinearSoftmax`: `z = W x + b`
//! * `Mlp`: `z = W2 tanh(W1 x + b1) + b2`
//!
//! Parameters live in one flat [`ParamVector`]. Linear layout is `W` (row-major,
//! `classes x input`) followed by `b`. MLP layout is `W1`, `b1`, `W2`, `b2`.

use std::ops::{Deref, DerefMut};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::numstat;

/// Smallest probability fed to the logarithm in the loss.
pub const LOG_CLAMP: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub init_std: f64,
}

impl ModelSpec {
    pub fn linear(input_dim: usize, num_classes: usize, init_std: f64) -> Self {
        Self {
            kind: ModelKind::LinearSoftmax,
            input_dim,
            hidden_dim: 0,
            num_classes,
            init_std,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize, init_std: f64) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dim,
            num_classes,
            init_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("model.input_dim", "must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("model.num_classes", "must be at least 2"));
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return Err(Error::config("model.init_std", "must be finite and >= 0"));
        }
        match self.kind {
            ModelKind::LinearSoftmax if self.hidden_dim != 0 => {
                Err(Error::config("model.hidden_dim", "must be 0 for linear_softmax"))
            }
            ModelKind::Mlp if self.hidden_dim == 0 => {
                Err(Error::config("model.hidden_dim", "must be positive for mlp"))
            }
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        match self.kind {
            ModelKind::LinearSoftmax => c * d + c,
            ModelKind::Mlp => h * d + h + c * h + c,
        }
    }

    /// Index ranges of the weight matrices (biases are the complement).
    fn weight_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        #[allow(clippy::single_range_in_vec_init)]
        match self.kind {
            ModelKind::LinearSoftmax => vec![0..c * d],
            ModelKind::Mlp => vec![0..h * d, h * d + h..h * d + h + c * h],
        }
    }
}

/// Flat parameter or update vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        numstat::norm(&self.0)
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: usize,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Self { x, y }
    }
}

/// Training target: a class index or a distribution over classes.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Hard(usize),
    Soft(&'a [f64]),
}

impl Target<'_> {
    fn weight(&self, class: usize) -> f64 {
        match *self {
            Target::Hard(y) => f64::from(u8::from(y == class)),
            Target::Soft(q) => q[class],
        }
    }
}

pub fn init_params<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<ParamVector> {
    spec.validate()?;
    let mut params = ParamVector::zeros(spec.param_count());
    for block in spec.weight_blocks() {
        let len = block.len();
        let draws = numstat::sample_gaussian(rng, 0.0, spec.init_std, len)?;
        params[block].copy_from_slice(&draws);
    }
    Ok(params)
}

fn check_inputs(spec: &ModelSpec, params: &[f64], x: &[f64]) -> Result<()> {
    check_dims(spec.param_count(), params.len())?;
    check_dims(spec.input_dim, x.len())
}

struct Forward {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(spec: &ModelSpec, params: &[f64], x: &[f64]) -> Forward {
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let affine = |w: &[f64], b: &[f64], input: &[f64], rows: usize, cols: usize| -> Vec<f64> {
        (0..rows)
            .map(|r| {
                let row = &w[r * cols..(r + 1) * cols];
                b[r] + row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect()
    };
    match spec.kind {
        ModelKind::LinearSoftmax => {
            let logits = affine(&params[..c * d], &params[c * d..], x, c, d);
            Forward {
                hidden: Vec::new(),
                logits,
            }
        }
        ModelKind::Mlp => {
            let (w1, rest) = params.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let hidden: Vec<f64> = affine(w1, b1, x, h, d).into_iter().map(f64::tanh).collect();
            let logits = affine(w2, b2, &hidden, c, h);
            Forward { hidden, logits }
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

pub fn logits(spec: &ModelSpec, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_inputs(spec, params, x)?;
    Ok(forward(spec, params, x).logits)
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn predict(spec: &ModelSpec, params: &[f64], x: &[f64]) -> Result<usize> {
    let z = logits(spec, params, x)?;
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    Ok(best)
}

fn check_label(spec: &ModelSpec, y: usize) -> Result<()> {
    if y < spec.num_classes {
        Ok(())
    } else {
        Err(Error::param(format!(
            "label {y} out of range for {} classes",
            spec.num_classes
        )))
    }
}

/// Cross-entropy `-log softmax_y(z)`, with the probability clamped at
/// [`LOG_CLAMP`].
pub fn loss(spec: &ModelSpec, params: &[f64], sample: &LabeledSample) -> Result<f64> {
    check_inputs(spec, params, &sample.x)?;
    check_label(spec, sample.y)?;
    let z = forward(spec, params, &sample.x).logits;
    let nll = log_sum_exp(&z) - z[sample.y];
    Ok(nll.clamp(0.0, -LOG_CLAMP.ln()))
}

/// Adds `weight * d loss(x, target) / d params` into `out`.
pub fn accumulate_grad(
    spec: &ModelSpec,
    params: &[f64],
    x: &[f64],
    target: Target<'_>,
    weight: f64,
    out: &mut [f64],
) -> Result<()> {
    check_inputs(spec, params, x)?;
    check_dims(spec.param_count(), out.len())?;
    match target {
        Target::Hard(y) => check_label(spec, y)?,
        Target::Soft(q) => check_dims(spec.num_classes, q.len())?,
    }
    let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let fwd = forward(spec, params, x);
    let dz: Vec<f64> = softmax(&fwd.logits)
        .into_iter()
        .enumerate()
        .map(|(k, p)| weight * (p - target.weight(k)))
        .collect();

    match spec.kind {
        ModelKind::LinearSoftmax => {
            let (gw, gb) = out.split_at_mut(c * d);
            for k in 0..c {
                numstat::axpy(dz[k], x, &mut gw[k * d..(k + 1) * d])?;
                gb[k] += dz[k];
            }
        }
        ModelKind::Mlp => {
            let w2 = &params[h * d + h..h * d + h + c * h];
            let (gw1, rest) = out.split_at_mut(h * d);
            let (gb1, rest) = rest.split_at_mut(h);
            let (gw2, gb2) = rest.split_at_mut(c * h);
            let mut dhidden = vec![0.0; h];
            for k in 0..c {
                numstat::axpy(dz[k], &fwd.hidden, &mut gw2[k * h..(k + 1) * h])?;
                gb2[k] += dz[k];
                numstat::axpy(dz[k], &w2[k * h..(k + 1) * h], &mut dhidden)?;
            }
            for j in 0..h {
                let da = dhidden[j] * (1.0 - fwd.hidden[j] * fwd.hidden[j]);
                numstat::axpy(da, x, &mut gw1[j * d..(j + 1) * d])?;
                gb1[j] += da;
            }
        }
    }
    Ok(())
}

pub fn grad_sample(spec: &ModelSpec, params: &[f64], sample: &LabeledSample) -> Result<ParamVector> {
    let mut g = ParamVector::zeros(spec.param_count());
    accumulate_grad(spec, params, &sample.x, Target::Hard(sample.y), 1.0, &mut g)?;
    Ok(g)
}

/// Mean of per-sample gradients.
pub fn grad_batch<'a, I>(spec: &ModelSpec, params: &[f64], samples: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = &'a LabeledSample>,
{
    let mut g = ParamVector::zeros(spec.param_count());
    let mut n = 0usize;
    for s in samples {
        accumulate_grad(spec, params, &s.x, Target::Hard(s.y), 1.0, &mut g)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySample("gradient of an empty batch"));
    }
    numstat::scale(&mut g, 1.0 / n as f64);
    Ok(g)
}

pub(crate) fn check_sgd_params(lr: f64, epochs: usize, batch_size: usize) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::param(format!("learning rate must be > 0, got {lr}")));
    }
    if epochs == 0 {
        return Err(Error::param("epochs must be >= 1"));
    }
    if batch_size == 0 {
        return Err(Error::param("batch size must be >= 1"));
    }
    Ok(())
}

/// Splits a shuffled index order into mini-batches; indices inside each batch
/// are sorted so a full batch sums in dataset order.
pub(crate) fn shuffled_batches<R: Rng + ?Sized>(
    rng: &mut R,
    mut order: Vec<usize>,
    batch_size: usize,
) -> Vec<Vec<usize>> {
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect()
}

/// Shuffled mini-batch SGD for `epochs` passes over `data`.
pub fn sgd_epochs<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &[LabeledSample],
    lr: f64,
    epochs: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<ParamVector> {
    check_sgd_params(lr, epochs, batch_size)?;
    if data.is_empty() {
        return Err(Error::EmptySample("training on an empty dataset"));
    }
    let mut w = params.clone();
    for _ in 0..epochs {
        for batch in shuffled_batches(rng, (0..data.len()).collect(), batch_size) {
            let g = grad_batch(spec, &w, batch.iter().map(|&i| &data[i]))?;
            numstat::axpy(-lr, &g, &mut w)?;
        }
    }
    Ok(w)
}

pub fn mean_loss(spec: &ModelSpec, params: &[f64], data: &[LabeledSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySample("loss over an empty dataset"));
    }
    let mut total = 0.0;
    for s in data {
        total += loss(spec, params, s)?;
    }
    Ok(total / data.len() as f64)
}

pub fn accuracy<'a, I>(spec: &ModelSpec, params: &[f64], data: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a LabeledSample>,
{
    let mut correct = 0usize;
    let mut n = 0usize;
    for s in data {
        if predict(spec, params, &s.x)? == s.y {
            correct += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySample("accuracy over an empty dataset"));
    }
    Ok(correct as f64 / n as f64)
}
