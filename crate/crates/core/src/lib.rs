//! Unsupervised multi-source domain expansion without source data.
//!
//! Given several classifiers pre-trained on different source domains and an
//! unlabelled sample of a new domain, the models are updated one at a time so
//! that their temperature-softened predictions agree on the new domain
//! (weighted by how uncertain each model is there) while staying close to what
//! the original models predicted. The updated and original models are then
//! fused into one classifier for the union of all domains.
//!
//! - [`nn`]: dense networks with analytic gradients and a finite-difference oracle.
//! - [`expansion`]: importance weights, bias/preservation losses, the update loop.
//! - [`fusion`]: M1/M2/baseline fusion, accuracy, reports.
//! - [`data`]: CSV datasets, stratified splits, the synthetic domain generator.
//! - [`pipeline`]: end-to-end in-memory runs on the synthetic benchmark.
//! - [`verify`]: the seeded finite-difference gradient suite.

pub mod data;
pub mod error;
pub mod expansion;
pub mod fusion;
pub mod nn;
pub mod pipeline;
pub mod verify;

pub use data::{DomainDataset, SplitSpec, SyntheticDomainConfig};
pub use error::{Error, Result};
pub use expansion::{EnsembleState, Hyperparams, WeightVector};
pub use fusion::{EvaluationReport, FusionMethod, PredictionBatch};
pub use nn::{Gradients, MlpModel};
