//! Dense feed-forward classifier: forward pass, exact input gradients,
//! plain-SGD training and a binary model container.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`, so the
//! pre-activation of unit `j` is `bias[j] + sum_i weights[j * in_dim + i] * a[i]`.
//! The last layer produces logits; softmax is applied at prediction time.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;

pub mod format;

pub use format::{load_model, save_model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    fn pre_activation(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.out_dim).map(|j| {
            self.row(j)
                .iter()
                .zip(input)
                .fold(self.bias[j], |acc, (w, a)| acc + w * a)
        }));
    }
}

/// Which model output a gradient (or a monitored curve) refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Probability,
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// inputs[l] is the input to layer l; inputs[L] is the logit vector.
    pub inputs: Vec<Vec<f64>>,
    /// pre[l] is the pre-activation of layer l.
    pub pre: Vec<Vec<f64>>,
}

impl Model {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    l + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// flatten -> (dense -> relu)* -> dense, Glorot-initialized from `seed`.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut rng = seed::rng(&[seed, 0x1417]);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-sized layer in {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let act = if l == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Dense::glorot(w[0], w[1], act, &mut rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.pre_activation(inputs.last().unwrap(), &mut z);
            inputs.push(z.iter().map(|&v| layer.activation.apply(v)).collect());
            pre.push(z);
        }
        Ok(Trace { inputs, pre })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.pre_activation(&a, &mut z);
            a.clear();
            a.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        Ok(a)
    }

    /// Softmax class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn output(&self, x: &[f64], kind: OutputKind) -> Result<Vec<f64>> {
        match kind {
            OutputKind::Probability => self.forward(x),
            OutputKind::Logit => self.logits(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Exact gradient of the class-`k` output with respect to the input.
    pub fn input_gradient(&self, x: &[f64], k: usize, kind: OutputKind) -> Result<Vec<f64>> {
        if k >= self.class_count() {
            return Err(Error::Shape(format!(
                "class {k} out of range for {} classes",
                self.class_count()
            )));
        }
        let trace = self.trace(x)?;
        let logits = trace.inputs.last().unwrap();
        let seed_grad = match kind {
            OutputKind::Logit => {
                let mut g = vec![0.0; logits.len()];
                g[k] = 1.0;
                g
            }
            OutputKind::Probability => {
                // d p_k / d z_j = p_k (delta_kj - p_j)
                let p = softmax(logits);
                (0..p.len())
                    .map(|j| p[k] * (if j == k { 1.0 } else { 0.0 } - p[j]))
                    .collect()
            }
        };
        let grad = self.backward(&trace, seed_grad, None);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite input gradient".into()));
        }
        Ok(grad)
    }

    /// Backpropagate `d_out` (gradient w.r.t. the logits). Accumulates parameter
    /// gradients into `grads` when given; returns the input gradient otherwise.
    fn backward(&self, trace: &Trace, d_out: Vec<f64>, mut grads: Option<&mut Gradients>) -> Vec<f64> {
        let mut delta = d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            // delta currently holds dL/d(output of layer l); move to dL/dz.
            for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= layer.activation.derivative(z);
            }
            let input = &trace.inputs[l];
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[l];
                for (j, &dj) in delta.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    let row = &mut gw[j * layer.in_dim..(j + 1) * layer.in_dim];
                    for (w, &a) in row.iter_mut().zip(input) {
                        *w += dj * a;
                    }
                    g.bias[l][j] += dj;
                }
                if l == 0 {
                    return Vec::new();
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                for (p, &w) in prev.iter_mut().zip(layer.row(j)) {
                    *p += w * dj;
                }
            }
            delta = prev;
        }
        delta
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

struct Gradients {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(model: &Model) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.out_dim]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| v.fill(0.0));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            learning_rate: 0.1,
            seed: 0,
            hidden: vec![128],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in &data.samples {
        if model.predict(&s.pixels)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mini-batch SGD on softmax cross-entropy. Single-threaded and fully
/// determined by `spec` and the sample order of `train`.
pub fn train(train: &Dataset, test: Option<&Dataset>, spec: &TrainSpec) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if spec.epochs == 0 || spec.batch_size == 0 || spec.learning_rate.is_nan() || spec.learning_rate < 0.0 {
        return Err(Error::Config(format!(
            "invalid train spec: epochs {}, batch size {}, learning rate {}",
            spec.epochs, spec.batch_size, spec.learning_rate
        )));
    }
    if let Some(t) = test {
        if t.dim() != train.dim() {
            return Err(Error::Shape("train and test dimensions differ".into()));
        }
    }
    let mut model = Model::mlp(train.dim(), &spec.hidden, train.class_count, spec.seed)?;
    let mut grads = Gradients::zeros(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(spec.epochs);

    for epoch in 0..spec.epochs {
        let mut rng = seed::rng(&[spec.seed, 0xE90C, epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(spec.batch_size) {
            grads.clear();
            for &i in batch {
                let s = &train.samples[i];
                let trace = model.trace(&s.pixels)?;
                let logits = trace.inputs.last().unwrap();
                loss_sum += log_sum_exp(logits) - logits[s.label];
                let mut p = softmax(logits);
                p[s.label] -= 1.0;
                model.backward(&trace, p, Some(&mut grads));
            }
            if !loss_sum.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "loss is not finite".into(),
                });
            }
            let step = spec.learning_rate / batch.len() as f64;
            for (l, layer) in model.layers.iter_mut().enumerate() {
                for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                    *w -= step * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(&grads.bias[l]) {
                    *b -= step * g;
                }
            }
        }
        let mean_loss = loss_sum / train.len() as f64;
        let params_finite = model
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()));
        if !mean_loss.is_finite() || !params_finite {
            return Err(Error::Training {
                epoch,
                reason: format!("mean loss {mean_loss}"),
            });
        }
        epoch_losses.push(mean_loss);
    }

    let train_accuracy = accuracy(&model, train)?;
    let test_accuracy = test.map(|t| accuracy(&model, t)).transpose()?;
    Ok(TrainOutcome {
        model,
        epoch_losses,
        train_accuracy,
        test_accuracy,
    })
}
