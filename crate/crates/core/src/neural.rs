//! Fully-connected networks with exact backpropagation, the Adam optimizer,
//! and a mean-aggregated word-embedding table.
//!
//! Batches are row-major: one sample per row.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }
}

/// Affine layer `y = act(W x + b)` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weight = Array2::from_shape_fn((output_dim, input_dim), |_| {
            rng.uniform_range(-limit, limit)
        });
        Self {
            weight,
            bias: Array1::zeros(output_dim),
            activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations cached by a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| {
                [
                    g.weight.as_slice().expect("standard layout"),
                    g.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape {
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Shape {
                    expected: layer.output_dim(),
                    actual: layer.bias.len(),
                });
            }
            if layer
                .weight
                .iter()
                .chain(layer.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Domain("network parameters must be finite".into()));
            }
        }
        Ok(Self { layers })
    }

    /// Relu hidden layers of the given widths and an identity output layer.
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut RngStream,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(Dense::init(fan_in, width, Activation::Relu, rng));
            fan_in = width;
        }
        layers.push(Dense::init(fan_in, output_dim, Activation::Identity, rng));
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let batch = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let (out, tape) = self.forward_batch(batch)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(input.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = input.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            let mut a = z.clone();
            layer.activation.apply(&mut a);
            inputs.push(current);
            pre_activations.push(z);
            current = a;
        }
        Ok((
            current,
            Tape {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without recording a tape.
    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut iter = self.layers.iter();
        let first = iter.next().expect("nonempty");
        let mut current = input.dot(&first.weight.t());
        current += &first.bias;
        first.activation.apply(&mut current);
        for layer in iter {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            layer.activation.apply(&mut z);
            current = z;
        }
        Ok(current)
    }

    /// Single-sample backward pass for a tape produced by [`Mlp::forward`].
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(MlpGrad, Vec<f64>)> {
        let grad = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
        let (g, input_grad) = self.backward_batch(tape, grad)?;
        Ok((g, input_grad.into_raw_vec_and_offset().0))
    }

    /// Gradients of `Σ output ⊙ output_grad` with respect to every parameter
    /// and to the network input.
    pub fn backward_batch(
        &self,
        tape: &Tape,
        output_grad: ArrayView2<f64>,
    ) -> Result<(MlpGrad, Array2<f64>)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::Shape {
                expected: self.layers.len(),
                actual: tape.inputs.len(),
            });
        }
        let rows = tape.inputs[0].nrows();
        if output_grad.dim() != (rows, self.output_dim()) {
            return Err(Error::Shape {
                expected: rows * self.output_dim(),
                actual: output_grad.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = output_grad.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                ndarray::Zip::from(&mut upstream)
                    .and(&tape.pre_activations[i])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            // `t().dot` may return column-major output for degenerate shapes.
            let weight = upstream
                .t()
                .dot(&tape.inputs[i])
                .as_standard_layout()
                .into_owned();
            let bias = upstream.sum_axis(Axis(0));
            let next = upstream.dot(&layer.weight);
            grads.push(DenseGrad { weight, bias });
            upstream = next;
        }
        grads.reverse();
        Ok((MlpGrad { layers: grads }, upstream))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&[f64]]) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(config, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape {
                expected: self.first.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != self.first[i].len() {
                return Err(Error::Shape {
                    expected: self.first[i].len(),
                    actual: p.len(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Reserved row for words outside the vocabulary.
pub const UNKNOWN_ROW: usize = 0;
/// Reserved row representing an empty description.
pub const EMPTY_ROW: usize = 1;

/// Word vectors aggregated by their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: BTreeMap<String, usize>,
    vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new<I, S>(words: I, dim: usize, rng: &mut RngStream) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = BTreeMap::new();
        for w in words {
            let w = w.into();
            let next = vocab.len() + 2;
            vocab.entry(w).or_insert(next);
        }
        let rows = vocab.len() + 2;
        let vectors = Array2::from_shape_fn((rows, dim), |_| 0.1 * rng.standard_normal());
        Self { vocab, vectors }
    }

    pub fn from_parts(vocab: BTreeMap<String, usize>, vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() < 2 {
            return Err(Error::Shape {
                expected: 2,
                actual: vectors.nrows(),
            });
        }
        if vocab.values().any(|&r| r < 2 || r >= vectors.nrows()) {
            return Err(Error::Domain(
                "embedding vocabulary points outside the table".into(),
            ));
        }
        Ok(Self { vocab, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vocab(&self) -> &BTreeMap<String, usize> {
        &self.vocab
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.vectors
    }

    pub fn row_index(&self, word: &str) -> usize {
        self.vocab.get(word).copied().unwrap_or(UNKNOWN_ROW)
    }

    fn rows_for(&self, words: &[String]) -> Vec<usize> {
        if words.is_empty() {
            vec![EMPTY_ROW]
        } else {
            // Sorted so the floating-point sum is independent of word order.
            let mut rows: Vec<usize> = words.iter().map(|w| self.row_index(w)).collect();
            rows.sort_unstable();
            rows
        }
    }

    /// Mean of the rows for `words`, written into `out`.
    pub fn embed_into(&self, words: &[String], out: &mut [f64]) {
        let rows = self.rows_for(words);
        out.iter_mut().for_each(|v| *v = 0.0);
        for &r in &rows {
            for (o, v) in out.iter_mut().zip(self.vectors.row(r)) {
                *o += v;
            }
        }
        let scale = 1.0 / rows.len() as f64;
        out.iter_mut().for_each(|v| *v *= scale);
    }

    pub fn embed(&self, words: &[String]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.embed_into(words, &mut out);
        out
    }

    /// Adds the gradient of the mean aggregation into `grad` (same shape as
    /// the table) given the gradient with respect to the embedded vector.
    pub fn accumulate_grad(&self, words: &[String], upstream: &[f64], grad: &mut Array2<f64>) {
        let rows = self.rows_for(words);
        let scale = 1.0 / rows.len() as f64;
        for &r in &rows {
            for (g, u) in grad.row_mut(r).iter_mut().zip(upstream) {
                *g += u * scale;
            }
        }
    }
}
