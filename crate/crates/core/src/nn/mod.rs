//! Minimal dense-network engine: forward passes, analytic backpropagation,
//! temperature softmax, SGD, and a finite-difference oracle.
//!
//! All arithmetic is `f64`; logarithms are natural.

mod gradcheck;
mod loss;
mod model;
mod optim;

pub use gradcheck::{finite_diff_gradient, max_relative_error, ABSOLUTE_FLOOR};
pub use loss::{
    cross_entropy, cross_entropy_with_grad, entropy, softmax_rows, softmax_temperature,
};
pub use model::{Activation, DenseLayer, ForwardCache, Gradients, LayerGradient, MlpModel};
pub use optim::{
    sgd_step, train_classifier, OptimizerState, TrainConfig, TrainReport, DEFAULT_LEARNING_RATE,
};

pub(crate) use optim::argmax_rows;
