//! Forward-only MLP classifiers with a designated cut layer.
//!
//! Parameters live in one flat vector, layer-major: for each dense layer the
//! weight matrix `[out × in]` row-major, then the bias `[out]`. The cut splits
//! that vector into a contiguous prefix θ₁ (layers before the cut) and suffix θ₂.

mod backprop;
mod checkpoint;

pub use backprop::backprop_gradient;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Identity,
    Tanh,
    Relu,
}

impl Nonlinearity {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Nonlinearity::Identity => v,
            Nonlinearity::Tanh => v.tanh(),
            Nonlinearity::Relu => v.max(T::zero()),
        }
    }

    /// FLOPs charged per output element.
    pub fn flops_per_element(self) -> u64 {
        match self {
            Nonlinearity::Identity => 0,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DenseLayer {
    pub input: usize,
    pub output: usize,
    pub nonlinearity: Nonlinearity,
}

impl DenseLayer {
    pub fn param_count(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Layer list plus the cut index: layers `0..cut` form f₁, `cut..` form f₂.
///
/// The loss is mean softmax cross-entropy over the batch.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    layers: Vec<DenseLayer>,
    cut: usize,
}

/// Parameter counts of the two blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSplit {
    pub cut: usize,
    pub d1: usize,
    pub d2: usize,
}

impl BlockSplit {
    pub fn d(&self) -> usize {
        self.d1 + self.d2
    }
}

impl ModelSpec {
    pub fn new(layers: Vec<DenseLayer>, cut: usize) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::config("a split model needs at least two layers"));
        }
        if cut == 0 || cut >= layers.len() {
            return Err(Error::config(format!(
                "cut {cut} must lie strictly inside 1..{}",
                layers.len()
            )));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output != w[1].input {
                return Err(Error::config(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    w[0].output,
                    i + 1,
                    w[1].input
                )));
            }
        }
        if layers.iter().any(|l| l.input == 0 || l.output == 0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(Self { layers, cut })
    }

    /// Dense stack `input → hidden… → classes`; hidden layers use `nonlinearity`,
    /// the classifier emits raw logits. Default cut: before the classifier.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        classes: usize,
        nonlinearity: Nonlinearity,
        cut: Option<usize>,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(DenseLayer {
                input: prev,
                output: h,
                nonlinearity,
            });
            prev = h;
        }
        layers.push(DenseLayer {
            input: prev,
            output: classes,
            nonlinearity: Nonlinearity::Identity,
        });
        let cut = cut.unwrap_or(layers.len() - 1);
        Self::new(layers, cut)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn cut(&self) -> usize {
        self.cut
    }

    pub fn with_cut(&self, cut: usize) -> Result<Self> {
        Self::new(self.layers.clone(), cut)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(|l| l.output).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn split(&self) -> BlockSplit {
        let d1 = self.layers[..self.cut].iter().map(DenseLayer::param_count).sum();
        let d2 = self.layers[self.cut..].iter().map(DenseLayer::param_count).sum();
        BlockSplit {
            cut: self.cut,
            d1,
            d2,
        }
    }

    /// Output width of the cut layer (columns of y_l).
    pub fn cut_width(&self) -> usize {
        self.layers[self.cut - 1].output
    }

    /// LeCun-normal weights (`N(0, 1/fan_in)`), zero biases.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParamVector<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            let normal = Normal::new(0.0, (1.0 / layer.input as f64).sqrt()).expect("valid std");
            for _ in 0..layer.input * layer.output {
                values.push(T::from_f64(normal.sample(&mut rng)));
            }
            values.extend(std::iter::repeat_n(T::zero(), layer.output));
        }
        ParamVector { values }
    }

    fn check_params(&self, len: usize, range: std::ops::Range<usize>, what: &str) -> Result<()> {
        let expected: usize = self.layers[range].iter().map(DenseLayer::param_count).sum();
        if len != expected {
            return Err(Error::config(format!(
                "{what} has {len} parameters, model expects {expected}"
            )));
        }
        Ok(())
    }

    fn check_batch<T: Scalar>(&self, batch: &Batch<T>) -> Result<()> {
        if batch.dim != self.input_dim() {
            return Err(Error::config(format!(
                "batch has {} features, model expects {}",
                batch.dim,
                self.input_dim()
            )));
        }
        let classes = self.num_classes();
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::config(format!("label {bad} outside 0..{classes}")));
        }
        Ok(())
    }

    /// Runs layers `range` on `x` (`rows × layers[range.start].input`).
    fn forward_layers<T: Scalar>(
        &self,
        range: std::ops::Range<usize>,
        params: &[T],
        x: &[T],
        rows: usize,
    ) -> Result<Vec<T>> {
        let mut offset = 0;
        let mut current: Option<Vec<T>> = None;
        for idx in range {
            let layer = &self.layers[idx];
            let n = layer.param_count();
            let input = current.as_deref().unwrap_or(x);
            let out = dense_forward(layer, &params[offset..offset + n], input, rows, idx)?;
            offset += n;
            current = Some(out);
        }
        Ok(current.unwrap_or_else(|| x.to_vec()))
    }

    /// Mean cross-entropy of the whole model on a batch.
    pub fn forward_loss<T: Scalar>(&self, theta: &[T], batch: &Batch<T>) -> Result<f64> {
        self.check_params(theta.len(), 0..self.layers.len(), "θ")?;
        self.check_batch(batch)?;
        let logits = self.forward_layers(0..self.layers.len(), theta, &batch.inputs, batch.rows())?;
        cross_entropy(&logits, &batch.labels, self.num_classes(), self.layers.len() - 1)
    }

    /// Output `y_l` of the last layer of f₁.
    pub fn forward_block1<T: Scalar>(&self, theta1: &[T], batch: &Batch<T>) -> Result<CutActivation<T>> {
        self.check_params(theta1.len(), 0..self.cut, "θ₁")?;
        self.check_batch(batch)?;
        let data = self.forward_layers(0..self.cut, theta1, &batch.inputs, batch.rows())?;
        Ok(CutActivation {
            data,
            rows: batch.rows(),
            cols: self.cut_width(),
        })
    }

    /// Loss of f₂ applied to a cached cut activation.
    pub fn forward_block2<T: Scalar>(
        &self,
        theta2: &[T],
        y_l: &CutActivation<T>,
        labels: &[usize],
    ) -> Result<f64> {
        self.check_params(theta2.len(), self.cut..self.layers.len(), "θ₂")?;
        if y_l.cols != self.cut_width() || y_l.rows != labels.len() || y_l.rows == 0 {
            return Err(Error::config(format!(
                "cut activation is {}×{}, expected {}×{}",
                y_l.rows,
                y_l.cols,
                labels.len(),
                self.cut_width()
            )));
        }
        let logits = self.forward_layers(self.cut..self.layers.len(), theta2, &y_l.data, y_l.rows)?;
        cross_entropy(&logits, labels, self.num_classes(), self.layers.len() - 1)
    }

    /// Logits for every row of the batch.
    pub fn logits<T: Scalar>(&self, theta: &[T], batch: &Batch<T>) -> Result<Vec<T>> {
        self.check_params(theta.len(), 0..self.layers.len(), "θ")?;
        self.check_batch(batch)?;
        self.forward_layers(0..self.layers.len(), theta, &batch.inputs, batch.rows())
    }

    /// Mean loss and accuracy on a batch.
    pub fn evaluate<T: Scalar>(&self, theta: &[T], batch: &Batch<T>) -> Result<(f64, f64)> {
        let logits = self.logits(theta, batch)?;
        let classes = self.num_classes();
        let loss = cross_entropy(&logits, &batch.labels, classes, self.layers.len() - 1)?;
        let correct = logits
            .chunks(classes)
            .zip(&batch.labels)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
        Ok((loss, correct as f64 / batch.rows() as f64))
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn dense_forward<T: Scalar>(
    layer: &DenseLayer,
    params: &[T],
    x: &[T],
    rows: usize,
    layer_idx: usize,
) -> Result<Vec<T>> {
    let (n_in, n_out) = (layer.input, layer.output);
    let (weights, bias) = params.split_at(n_in * n_out);
    let mut out = Vec::with_capacity(rows * n_out);
    let mut finite = true;
    for row in x.chunks_exact(n_in) {
        for (o, w_row) in weights.chunks_exact(n_in).enumerate() {
            let mut acc = bias[o];
            for (xi, wi) in row.iter().zip(w_row) {
                acc = acc + *xi * *wi;
            }
            let v = layer.nonlinearity.apply(acc);
            finite &= v.is_finite();
            out.push(v);
        }
    }
    if finite {
        Ok(out)
    } else {
        Err(Error::NonFiniteActivation { layer: layer_idx })
    }
}

/// Mean softmax cross-entropy, computed with the max-shifted log-sum-exp.
fn cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize, layer: usize) -> Result<f64> {
    let mut total = T::zero();
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum = row.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp());
        total = total + (m + sum.ln() - row[y]);
    }
    let loss = (total / T::from_f64(labels.len() as f64)).as_f64();
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteActivation { layer })
    }
}

/// Flat parameter vector θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn from_vec(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            values: vec![T::zero(); d],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    /// Mutable views of θ₁ and θ₂.
    pub fn blocks_mut(&mut self, d1: usize) -> (&mut [T], &mut [T]) {
        self.values.split_at_mut(d1)
    }

    pub fn blocks(&self, d1: usize) -> (&[T], &[T]) {
        self.values.split_at(d1)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

/// Row-major batch of inputs with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub inputs: Vec<T>,
    pub dim: usize,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(inputs: Vec<T>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("batch must contain at least one sample"));
        }
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::config(format!(
                "batch inputs of length {} do not match {} rows × {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, dim, labels })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }
}

/// Cached output of f₁ at the cut.
#[derive(Clone, Debug, PartialEq)]
pub struct CutActivation<T> {
    pub data: Vec<T>,
    pub rows: usize,
    pub cols: usize,
}
