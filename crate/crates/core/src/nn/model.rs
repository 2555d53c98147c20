//! Dense layers, the feedforward classifier, and its forward/backward passes.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`; a batch is an
//! `N × in_dim` matrix, so a layer computes `Z = A · Wᵀ + b`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{input, shape, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => z.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Identity => z.clone(),
        }
    }
}

/// One affine map followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub(crate) weights: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    pub(crate) activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(shape("layer dimensions must be positive"));
        }
        if bias.len() != weights.nrows() {
            return Err(shape(format!(
                "bias length {} does not match layer output dim {}",
                bias.len(),
                weights.nrows()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(input("layer parameters must be finite"));
        }
        Ok(Self {
            weights: weights.as_standard_layout().to_owned(),
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(shape("layer dimensions must be positive"));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist =
            Uniform::new_inclusive(-limit, limit).map_err(|e| Error::Parameter(e.to_string()))?;
        let weights = Array2::from_shape_fn((out_dim, in_dim), |_| dist.sample(rng));
        Ok(Self {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = inputs.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// A dense feedforward classifier whose last layer emits `num_classes` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

/// Intermediate values of one forward pass, needed by [`MlpModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch; `activations[k + 1]` is the output of layer `k`.
    pub(crate) activations: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pub(crate) pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre_activations
    }
}

/// Per-layer gradient blocks, shape-congruent with an [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl MlpModel {
    /// Builds a model from explicit layers, checking that the dims chain and
    /// that the final layer emits raw logits.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| shape("a model needs at least one layer"))?;
        if last.activation != Activation::Identity {
            return Err(shape("the output layer must use the identity activation"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape(format!(
                    "layer {} emits {} values but layer {} expects {}",
                    k,
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized relu network with the given hidden widths.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            layers.push(DenseLayer::glorot(fan_in, width, Activation::Relu, rng)?);
            fan_in = width;
        }
        layers.push(DenseLayer::glorot(
            fan_in,
            num_classes,
            Activation::Identity,
            rng,
        )?);
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_batch(&self, batch: &ArrayView2<'_, f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(shape(format!(
                "batch has {} features, model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for every row of `batch`, plus the cache needed for backpropagation.
    pub fn forward_logits(
        &self,
        batch: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_batch(&batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(batch.to_owned());
        for layer in &self.layers {
            let z = layer.pre_activation(activations.last().unwrap().view());
            activations.push(layer.activation.apply(&z));
            pre_activations.push(z);
        }
        let logits = activations.last().unwrap().clone();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "forward pass produced non-finite logits".into(),
            ));
        }
        Ok((
            logits,
            ForwardCache {
                activations,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn logits(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        let mut a = batch.to_owned();
        for layer in &self.layers {
            let z = layer.pre_activation(a.view());
            a = match layer.activation {
                Activation::Relu => z.mapv_into(|v| if v > 0.0 { v } else { 0.0 }),
                Activation::Identity => z,
            };
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "forward pass produced non-finite logits".into(),
            ));
        }
        Ok(a)
    }

    /// Backpropagates `d_logits` (the gradient of a scalar loss with respect to
    /// the logits of the cached batch) into parameter gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: ArrayView2<'_, f64>,
    ) -> Result<Gradients> {
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(shape("forward cache does not belong to this model"));
        }
        let n = cache.batch_size();
        if d_logits.dim() != (n, self.num_classes()) {
            return Err(shape(format!(
                "upstream gradient is {:?}, expected ({}, {})",
                d_logits.dim(),
                n,
                self.num_classes()
            )));
        }
        for (layer, z) in self.layers.iter().zip(&cache.pre_activations) {
            if z.dim() != (n, layer.out_dim()) {
                return Err(shape("forward cache does not belong to this model"));
            }
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_logits.to_owned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if layer.activation == Activation::Relu {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre_activations[k])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            let a_prev = &cache.activations[k];
            let d_weights = delta.t().dot(a_prev);
            let d_bias = delta.sum_axis(Axis(0));
            if k > 0 {
                delta = delta.dot(&layer.weights);
            }
            grads.push(LayerGradient {
                weights: d_weights,
                bias: d_bias,
            });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Mutable access to the `index`-th scalar parameter, enumerating each layer's
    /// weights (row-major) and then its bias.
    pub(crate) fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if index < nw {
                let cols = layer.weights.ncols();
                return &mut layer.weights[[index / cols, index % cols]];
            }
            index -= nw;
            let nb = layer.bias.len();
            if index < nb {
                return &mut layer.bias[index];
            }
            index -= nb;
        }
        panic!("parameter index out of range");
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerGradient] {
        &self.layers
    }

    pub fn is_congruent(&self, model: &MlpModel) -> bool {
        self.layers.len() == model.layers.len()
            && self
                .layers
                .iter()
                .zip(&model.layers)
                .all(|(g, l)| g.weights.dim() == l.weights.dim() && g.bias.len() == l.bias.len())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(shape("gradient blocks do not match"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.dim() != b.weights.dim() || a.bias.len() != b.bias.len() {
                return Err(shape("gradient blocks do not match"));
            }
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
        Ok(())
    }

    /// All entries in the same order as [`MlpModel::parameter_mut`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    input_dim: usize,
    num_classes: usize,
    layers: Vec<LayerDocument>,
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    #[serde(rename = "in")]
    in_dim: usize,
    #[serde(rename = "out")]
    out_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<&MlpModel> for ModelDocument {
    fn from(model: &MlpModel) -> Self {
        Self {
            input_dim: model.input_dim(),
            num_classes: model.num_classes(),
            layers: model
                .layers
                .iter()
                .map(|l| LayerDocument {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelDocument> for MlpModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (k, l) in doc.layers.into_iter().enumerate() {
            if l.weights.len() != l.in_dim * l.out_dim {
                return Err(shape(format!(
                    "layer {k}: {} weights for a {}x{} matrix",
                    l.weights.len(),
                    l.out_dim,
                    l.in_dim
                )));
            }
            let weights = Array2::from_shape_vec((l.out_dim, l.in_dim), l.weights)
                .map_err(|e| shape(e.to_string()))?;
            layers.push(DenseLayer::new(
                weights,
                Array1::from(l.bias),
                l.activation,
            )?);
        }
        let model = MlpModel::new(layers)?;
        if model.input_dim() != doc.input_dim || model.num_classes() != doc.num_classes {
            return Err(shape(format!(
                "declared dims {}→{} disagree with layers {}→{}",
                doc.input_dim,
                doc.num_classes,
                model.input_dim(),
                model.num_classes()
            )));
        }
        Ok(model)
    }
}
