//! Plain / momentum SGD and a supervised training loop for source models.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::cross_entropy_with_grad;
use super::model::{Gradients, MlpModel};
use crate::error::{param, shape, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// SGD settings plus the momentum buffer, if momentum is enabled.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    learning_rate: f64,
    momentum: f64,
    velocity: Option<Gradients>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::with_momentum(learning_rate, 0.0)
    }

    pub fn with_momentum(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(param(format!(
                "learning rate must be nonnegative, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(param(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: None,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// In-place update `θ ← θ − lr · v`, with `v = μ v + ∇` (or `v = ∇` without momentum).
    pub fn apply(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if !grads.is_congruent(model) {
            return Err(shape("gradients are not congruent with the model"));
        }
        let step = if self.momentum > 0.0 {
            let velocity = self
                .velocity
                .get_or_insert_with(|| Gradients::zeros_like(model));
            for (v, g) in velocity.layers.iter_mut().zip(&grads.layers) {
                v.weights *= self.momentum;
                v.weights += &g.weights;
                v.bias *= self.momentum;
                v.bias += &g.bias;
            }
            &*velocity
        } else {
            grads
        };
        let lr = self.learning_rate;
        for (layer, g) in model.layers_mut().iter_mut().zip(&step.layers) {
            layer.weights.scaled_add(-lr, &g.weights);
            layer.bias.scaled_add(-lr, &g.bias);
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::apply`].
pub fn sgd_step(model: &MlpModel, grads: &Gradients, opt: &mut OptimizerState) -> Result<MlpModel> {
    let mut next = model.clone();
    opt.apply(&mut next, grads)?;
    Ok(next)
}

/// Supervised training settings for a source classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![1000],
            epochs: 30,
            batch_size: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Cross-entropy mini-batch SGD with per-epoch shuffling drawn from `rng`.
pub fn train_classifier<R: Rng + ?Sized>(
    model: &mut MlpModel,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(param("batch size must be positive"));
    }
    if features.nrows() != labels.len() {
        return Err(shape("feature rows and labels differ in length"));
    }
    let mut opt = OptimizerState::with_momentum(cfg.learning_rate, cfg.momentum)?;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = features.select(Axis(0), chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&k| labels[k]).collect();
            let (logits, cache) = model.forward_logits(batch.view())?;
            let (loss, d_logits) = cross_entropy_with_grad(logits.view(), &batch_labels)?;
            let grads = model.backward(&cache, d_logits.view())?;
            opt.apply(model, &grads)?;
            total += loss * chunk.len() as f64;
        }
        epoch_losses.push(total / labels.len().max(1) as f64);
    }
    let train_accuracy = predict_accuracy(model, features, labels)?;
    Ok(TrainReport {
        epoch_losses,
        train_accuracy,
    })
}

pub(crate) fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn predict_accuracy(
    model: &MlpModel,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let predicted = argmax_rows(&model.logits(features)?);
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_model(w: f64) -> MlpModel {
        MlpModel::new(vec![DenseLayer::new(
            array![[w]],
            array![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn grads_of(model: &MlpModel, f: impl Fn(f64) -> f64) -> Gradients {
        let mut g = Gradients::zeros_like(model);
        for (gl, l) in g.layers.iter_mut().zip(model.layers()) {
            gl.weights = l.weights().mapv(&f);
            gl.bias = l.bias().mapv(&f);
        }
        g
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = MlpModel::init(3, &[4], 2, &mut rng).unwrap();
        let grads = grads_of(&model, |v| v + 1.0);
        let next = sgd_step(&model, &grads, &mut OptimizerState::sgd(0.0).unwrap()).unwrap();
        assert_eq!(next, model);
    }

    #[test]
    fn unit_step_along_parameters_zeroes_them() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = MlpModel::init(3, &[4], 2, &mut rng).unwrap();
        let grads = grads_of(&model, |v| v);
        let next = sgd_step(&model, &grads, &mut OptimizerState::sgd(1.0).unwrap()).unwrap();
        for layer in next.layers() {
            assert!(layer
                .weights()
                .iter()
                .chain(layer.bias().iter())
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn scalar_step() {
        let model = scalar_model(1.0);
        let mut grads = Gradients::zeros_like(&model);
        grads.layers[0].weights = array![[2.0]];
        let next = sgd_step(&model, &grads, &mut OptimizerState::sgd(0.1).unwrap()).unwrap();
        assert!((next.layers()[0].weights()[[0, 0]] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let model = scalar_model(1.0);
        let mut grads = Gradients::zeros_like(&model);
        grads.layers[0].weights = array![[1.0]];
        let mut opt = OptimizerState::with_momentum(0.1, 0.5).unwrap();
        let once = sgd_step(&model, &grads, &mut opt).unwrap();
        let twice = sgd_step(&once, &grads, &mut opt).unwrap();
        // v1 = 1, v2 = 1.5
        assert!((twice.layers()[0].weights()[[0, 0]] - (1.0 - 0.1 - 0.15)).abs() < 1e-15);
    }

    #[test]
    fn rejects_incongruent_gradients() {
        let model = scalar_model(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let other = MlpModel::init(2, &[3], 2, &mut rng).unwrap();
        let grads = Gradients::zeros_like(&other);
        assert!(sgd_step(&model, &grads, &mut OptimizerState::sgd(0.1).unwrap()).is_err());
        assert!(OptimizerState::sgd(-1.0).is_err());
    }

    #[test]
    fn separable_data_trains_to_full_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 120;
        let features = Array2::from_shape_fn((n, 2), |(i, j)| {
            let side = if i % 2 == 0 { 2.0 } else { -2.0 };
            if j == 0 {
                side + 0.3 * ((i * 7) as f64).sin()
            } else {
                ((i * 13) as f64).cos()
            }
        });
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut model = MlpModel::init(2, &[16], 2, &mut rng).unwrap();
        let cfg = TrainConfig {
            hidden: vec![16],
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.1,
            momentum: 0.0,
        };
        let report =
            train_classifier(&mut model, features.view(), &labels, &cfg, &mut rng).unwrap();
        assert!(report.train_accuracy >= 0.99);
        assert!(report.epoch_losses.last() < report.epoch_losses.first());
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = MlpModel::init(2, &[4], 2, &mut rng).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let features = Array2::zeros((3, 2));
        train_classifier(&mut model, features.view(), &[0, 1, 0], &cfg, &mut rng).unwrap();
        assert_eq!(model, before);
    }
}
