//! Seeded finite-difference checks of every analytic gradient in the crate.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::expansion::{
    bias_loss, ensemble_weights, overall_loss, preservation_loss, EnsembleState, Hyperparams,
};
use crate::nn::{
    cross_entropy_with_grad, finite_diff_gradient, max_relative_error, Gradients, MlpModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    CrossEntropy,
    Bias,
    Preservation,
    Overall,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [
        LossTerm::CrossEntropy,
        LossTerm::Bias,
        LossTerm::Preservation,
        LossTerm::Overall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::CrossEntropy => "cross_entropy",
            LossTerm::Bias => "bias_loss",
            LossTerm::Preservation => "preservation_loss",
            LossTerm::Overall => "overall_loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Tiny instances per loss term.
    pub instances: usize,
    pub epsilon: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 5,
            epsilon: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermResult {
    pub term: LossTerm,
    /// Maximum relative error of each instance.
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub terms: Vec<TermResult>,
    pub passed: bool,
}

/// One tiny problem: an ensemble whose updated models differ from the
/// originals, a labelled batch, and the model index under test.
struct Instance {
    ensemble: EnsembleState,
    batch: Array2<f64>,
    labels: Vec<usize>,
    index: usize,
    hp: Hyperparams,
}

fn perturbed(model: &MlpModel, scale: f64, rng: &mut ChaCha8Rng) -> MlpModel {
    let mut out = model.clone();
    for k in 0..out.num_parameters() {
        let e: f64 = rng.sample(StandardNormal);
        *out.parameter_mut(k) += scale * e;
    }
    out
}

fn instance(seed: u64, k: usize) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let m = 2 + k % 2;
    let (d, c, n) = (3, 3 + k % 2, 5);
    let originals = (0..m)
        .map(|_| MlpModel::init(d, &[4], c, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let updated = originals
        .iter()
        .map(|o| perturbed(o, 0.3, &mut rng))
        .collect();
    let batch = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    Ok(Instance {
        ensemble: EnsembleState::from_parts(originals, updated)?,
        batch,
        labels,
        index: k % m,
        hp: Hyperparams::default(),
    })
}

fn with_model(ensemble: &EnsembleState, i: usize, model: &MlpModel) -> Result<EnsembleState> {
    let mut updated = ensemble.updated().to_vec();
    updated[i] = model.clone();
    EnsembleState::from_parts(ensemble.originals().to_vec(), updated)
}

/// `(loss, analytic gradient)` closure for one term, evaluated at `model`
/// standing in for the tested parameters.
fn evaluate(term: LossTerm, inst: &Instance, model: &MlpModel) -> Result<(f64, Gradients)> {
    let batch = inst.batch.view();
    let t = inst.hp.temperature;
    match term {
        LossTerm::CrossEntropy => {
            let (logits, cache) = model.forward_logits(batch)?;
            let (loss, d) = cross_entropy_with_grad(logits.view(), &inst.labels)?;
            Ok((loss, model.backward(&cache, d.view())?))
        }
        LossTerm::Bias => bias_loss(
            &with_model(&inst.ensemble, inst.index, model)?,
            inst.index,
            batch,
            t,
        ),
        LossTerm::Preservation => preservation_loss(
            &with_model(&inst.ensemble, inst.index, model)?,
            inst.index,
            batch,
            t,
        ),
        LossTerm::Overall => {
            // The weights are constants of the objective: fixed from the starting point.
            let weights = ensemble_weights(&inst.ensemble, batch, &inst.hp)?;
            let ens = with_model(&inst.ensemble, inst.index, model)?;
            let out = overall_loss(&ens, inst.index, batch, &weights, &inst.hp)?;
            Ok((out.total, out.grads))
        }
    }
}

/// Runs the suite. `tamper` may alter each analytic gradient before comparison;
/// it exists so that a negative control can prove the check detects errors.
pub fn run_gradient_suite_with<F>(cfg: &GradcheckConfig, tamper: F) -> Result<GradcheckReport>
where
    F: Fn(LossTerm, &mut Gradients),
{
    if cfg.instances == 0 {
        return Err(param("gradcheck needs at least one instance"));
    }
    if cfg.tolerance.is_nan() || cfg.tolerance <= 0.0 {
        return Err(param(format!(
            "tolerance must be positive, got {}",
            cfg.tolerance
        )));
    }
    let instances = (0..cfg.instances)
        .map(|k| instance(cfg.seed, k))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::with_capacity(LossTerm::ALL.len());
    for term in LossTerm::ALL {
        let mut errors = Vec::with_capacity(instances.len());
        for inst in &instances {
            let start = if term == LossTerm::CrossEntropy {
                &inst.ensemble.originals()[inst.index]
            } else {
                &inst.ensemble.updated()[inst.index]
            };
            let (_, mut analytic) = evaluate(term, inst, start)?;
            tamper(term, &mut analytic);
            let numeric = finite_diff_gradient(
                |m| evaluate(term, inst, m).map(|(l, _)| l),
                start,
                cfg.epsilon,
            )?;
            errors.push(max_relative_error(&analytic, &numeric)?);
        }
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        terms.push(TermResult {
            term,
            passed: max_error <= cfg.tolerance,
            errors,
            max_error,
        });
    }
    Ok(GradcheckReport {
        config: cfg.clone(),
        passed: terms.iter().all(|t| t.passed),
        terms,
    })
}

pub fn run_gradient_suite(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    run_gradient_suite_with(cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::cross_entropy;

    fn labels_in_range(inst: &Instance) -> bool {
        let c = inst.ensemble.num_classes();
        let logits = inst.ensemble.originals()[0]
            .logits(inst.batch.view())
            .unwrap();
        inst.labels.iter().all(|&y| y < c) && cross_entropy(logits.view(), &inst.labels).is_ok()
    }

    #[test]
    fn default_suite_passes() {
        let report = run_gradient_suite(&GradcheckConfig::default()).unwrap();
        for t in &report.terms {
            assert_eq!(t.errors.len(), 5);
            assert!(t.passed, "{:?} max error {}", t.term, t.max_error);
        }
        assert!(report.passed);
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let report = run_gradient_suite_with(&GradcheckConfig::default(), |term, g| {
            if term == LossTerm::Bias {
                g.layers[0].bias[0] += 0.5;
            }
        })
        .unwrap();
        assert!(!report.passed);
        for t in &report.terms {
            assert_eq!(t.passed, t.term != LossTerm::Bias);
        }
    }

    #[test]
    fn instances_are_well_formed() {
        for k in 0..6 {
            let inst = instance(7, k).unwrap();
            assert!(labels_in_range(&inst));
            assert!(inst.index < inst.ensemble.len());
            assert_ne!(inst.ensemble.originals(), inst.ensemble.updated());
        }
    }

    #[test]
    fn rejects_empty_suite() {
        let cfg = GradcheckConfig {
            instances: 0,
            ..Default::default()
        };
        assert!(run_gradient_suite(&cfg).is_err());
    }
}
