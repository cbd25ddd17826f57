//! Dense feed-forward network over a flat weight vector.
//!
//! Parameter layout, per layer in order: the weight matrix row-major with
//! shape `(fan_out, fan_in)`, then the `fan_out` biases. Because every model
//! of one [`ModelSpec`] shares this layout, averaging two models' weights is a
//! plain elementwise mean of their [`WeightVector`]s.
//!
//! Hidden layers use ReLU. The output layer is softmax (categorical
//! cross-entropy) or a single sigmoid unit (binary cross-entropy). Losses are
//! means over samples, with probabilities clamped to
//! `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Lower clamp applied to probabilities inside the log of every loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenActivation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input dimension first, output dimension last.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    /// Seed for [`init_weights`].
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, output_activation: OutputActivation, seed: u64) -> Result<Self> {
        let spec = Self {
            layer_sizes,
            hidden_activation: HiddenActivation::Relu,
            output_activation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "layer_sizes needs at least an input and an output size".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be >= 1".into()));
        }
        match (self.output_activation, self.output_dim()) {
            (OutputActivation::Softmax, d) if d < 2 => Err(Error::InvalidConfig(
                "softmax output needs at least 2 units".into(),
            )),
            (OutputActivation::Sigmoid, d) if d != 1 => Err(Error::InvalidConfig(
                "sigmoid output needs exactly 1 unit".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Total parameter count: Σ (fan_in · fan_out + fan_out).
    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Same architecture with a different initialization seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// `(weight offset, bias offset, fan_in, fan_out)` for each layer.
    fn layer_offsets(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let w_off = off;
                let b_off = off + fan_in * fan_out;
                off = b_off + fan_out;
                (w_off, b_off, fan_in, fan_out)
            })
            .collect()
    }

    fn check_weights(&self, w: &WeightVector) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "weight vector has {} entries, model needs {}",
                w.len(),
                self.num_params()
            )));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "inputs have {} columns, model expects {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector in the canonical layout of its [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Inputs paired with training targets.
///
/// Softmax targets are one-hot rows; sigmoid targets are a single 0/1 column.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        if inputs.rows() == 0 {
            return Err(Error::Empty("batch"));
        }
        Ok(Self { inputs, targets })
    }

    /// Encodes class labels for `spec`'s output layer: one-hot for softmax,
    /// a 0/1 column for sigmoid.
    pub fn from_labels(spec: &ModelSpec, inputs: Matrix, labels: &[usize]) -> Result<Self> {
        let width = spec.output_dim();
        let mut targets = Matrix::zeros(labels.len(), width);
        for (i, &y) in labels.iter().enumerate() {
            match spec.output_activation {
                OutputActivation::Softmax => {
                    if y >= width {
                        return Err(Error::InvalidArgument(format!(
                            "label {y} out of range for {width} classes"
                        )));
                    }
                    targets.row_mut(i)[y] = 1.0;
                }
                OutputActivation::Sigmoid => {
                    if y > 1 {
                        return Err(Error::InvalidArgument(format!(
                            "label {y} is not binary"
                        )));
                    }
                    targets.row_mut(i)[0] = y as f64;
                }
            }
        }
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select_rows(indices),
        }
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        spec.check_inputs(&self.inputs)?;
        if self.targets.cols() != spec.output_dim() {
            return Err(Error::Dimension(format!(
                "targets have {} columns, model outputs {}",
                self.targets.cols(),
                spec.output_dim()
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `spec.seed`.
pub fn init_weights(spec: &ModelSpec) -> WeightVector {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w = vec![0.0; spec.num_params()];
    for (w_off, _, fan_in, fan_out) in spec.layer_offsets() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite positive limit");
        for v in &mut w[w_off..w_off + fan_in * fan_out] {
            *v = dist.sample(&mut rng);
        }
    }
    WeightVector(w)
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// `out = W x + b` for one layer.
#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let fan_in = x.len();
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &w[o * fan_in..(o + 1) * fan_in];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *out_v = acc;
    }
}

/// Forward pass for one sample; `acts[l]` receives the post-activation output
/// of layer `l` (the last entry holds probabilities).
fn forward_sample(spec: &ModelSpec, w: &[f64], x: &[f64], acts: &mut [Vec<f64>]) {
    let offsets = spec.layer_offsets();
    let last = offsets.len() - 1;
    for (l, &(w_off, b_off, fan_in, fan_out)) in offsets.iter().enumerate() {
        let (prev, rest) = acts.split_at_mut(l);
        let input: &[f64] = if l == 0 { x } else { &prev[l - 1] };
        let out = &mut rest[0];
        affine(
            &w[w_off..w_off + fan_in * fan_out],
            &w[b_off..b_off + fan_out],
            input,
            out,
        );
        if l < last {
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        } else {
            match spec.output_activation {
                OutputActivation::Softmax => softmax_in_place(out),
                OutputActivation::Sigmoid => out[0] = sigmoid(out[0]),
            }
        }
    }
}

fn activation_buffers(spec: &ModelSpec) -> Vec<Vec<f64>> {
    spec.layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect()
}

/// Predicted probabilities, one row per input row.
pub fn forward(spec: &ModelSpec, w: &WeightVector, inputs: &Matrix) -> Result<Matrix> {
    spec.check_weights(w)?;
    spec.check_inputs(inputs)?;
    let mut out = Matrix::zeros(inputs.rows(), spec.output_dim());
    let mut acts = activation_buffers(spec);
    for i in 0..inputs.rows() {
        forward_sample(spec, &w.0, inputs.row(i), &mut acts);
        out.row_mut(i).copy_from_slice(acts.last().expect("at least one layer"));
    }
    Ok(out)
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn sample_loss(kind: OutputActivation, probs: &[f64], target: &[f64]) -> f64 {
    match kind {
        OutputActivation::Softmax => probs
            .iter()
            .zip(target)
            .filter(|(_, &t)| t != 0.0)
            .map(|(&p, &t)| -t * clamp_prob(p).ln())
            .sum(),
        OutputActivation::Sigmoid => {
            let p = clamp_prob(probs[0]);
            let t = target[0];
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        }
    }
}

/// Mean cross-entropy over the batch.
pub fn loss(spec: &ModelSpec, w: &WeightVector, batch: &Batch) -> Result<f64> {
    let probs = forward(spec, w, &batch.inputs)?;
    batch.check(spec)?;
    Ok(loss_from_probs(spec.output_activation, &probs, &batch.targets))
}

pub(crate) fn loss_from_probs(kind: OutputActivation, probs: &Matrix, targets: &Matrix) -> f64 {
    let total: f64 = probs
        .iter_rows()
        .zip(targets.iter_rows())
        .map(|(p, t)| sample_loss(kind, p, t))
        .sum();
    total / probs.rows() as f64
}

/// ∂loss/∂w by backpropagation, same layout as `w`.
///
/// Uses the unclamped derivative `p - t` at the output pre-activation, which is
/// exact whenever no probability sits at the clamp.
pub fn gradient(spec: &ModelSpec, w: &WeightVector, batch: &Batch) -> Result<WeightVector> {
    spec.check_weights(w)?;
    batch.check(spec)?;

    let offsets = spec.layer_offsets();
    let n = batch.len() as f64;
    let mut grad = vec![0.0; w.len()];
    let mut acts = activation_buffers(spec);
    let mut deltas = activation_buffers(spec);

    for i in 0..batch.len() {
        let x = batch.inputs.row(i);
        let t = batch.targets.row(i);
        forward_sample(spec, &w.0, x, &mut acts);

        let last = offsets.len() - 1;
        for (d, (&p, &ti)) in deltas[last].iter_mut().zip(acts[last].iter().zip(t)) {
            *d = (p - ti) / n;
        }

        for l in (0..offsets.len()).rev() {
            let (w_off, b_off, fan_in, fan_out) = offsets[l];
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            let delta = &deltas[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (g, xi) in g_row.iter_mut().zip(input) {
                    *g += d * xi;
                }
                grad[b_off + o] += d;
            }
            if l > 0 {
                let (lower, upper) = deltas.split_at_mut(l);
                let delta = &upper[0];
                let prev = &mut lower[l - 1];
                let a_prev = &acts[l - 1];
                for j in 0..fan_in {
                    if a_prev[j] <= 0.0 {
                        prev[j] = 0.0;
                        continue;
                    }
                    prev[j] = delta
                        .iter()
                        .enumerate()
                        .map(|(o, d)| w.0[w_off + o * fan_in + j] * d)
                        .sum();
                }
            }
        }
    }
    Ok(WeightVector(grad))
}

const CKPT_MAGIC: &str = "CKPT1";

/// Serializes weights as `CKPT1 <n>` followed by one value per line.
///
/// `f64`'s `Display` prints the shortest representation that parses back to
/// the same bits, so the format round-trips exactly.
pub fn weights_to_string(w: &WeightVector) -> String {
    let mut s = String::with_capacity(w.len() * 22 + 16);
    let _ = writeln!(s, "{CKPT_MAGIC} {}", w.len());
    for v in &w.0 {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn weights_from_str(text: &str, path: &Path) -> Result<WeightVector> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(CKPT_MAGIC) {
        return Err(parse_err(1, format!("expected `{CKPT_MAGIC} <n_params>` header")));
    }
    let n: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| parse_err(1, "missing parameter count".into()))?;
    let mut values = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| parse_err(i + 2, format!("not a number: {line:?}")))?;
        if !v.is_finite() {
            return Err(parse_err(i + 2, "non-finite weight".into()));
        }
        values.push(v);
    }
    if values.len() != n {
        return Err(parse_err(
            1,
            format!("header declares {n} parameters, found {}", values.len()),
        ));
    }
    Ok(WeightVector(values))
}

pub fn write_weights(path: &Path, w: &WeightVector) -> Result<()> {
    fs::write(path, weights_to_string(w)).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<WeightVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    weights_from_str(&text, path)
}
