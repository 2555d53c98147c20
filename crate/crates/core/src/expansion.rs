//! Source-free expansion of an ensemble of pre-trained classifiers.
//!
//! Every source model `i` keeps a frozen original `θᵢ⁽ᵒ⁾` and an updated copy
//! `θᵢ⁽ᵘ⁾`. On unlabelled new-domain data, the updated copy is trained to
//!
//! ```text
//! L_overall(i) = L_org(i) + λ · wᵢ · L_bias(i)
//! L_bias(i)    = 1/N Σₙ Σ_{j≠i} ‖σ(oᵢ⁽ᵘ⁾(xₙ)/T) − σ(oⱼ⁽ᵘ⁾(xₙ)/T)‖²
//! L_org(i)     = 1/N Σₙ ‖σ(oᵢ⁽ᵘ⁾(xₙ)/T) − σ(oᵢ⁽ᵒ⁾(xₙ)/T)‖²
//! wᵢ           = softmax(E / T₀)ᵢ,   Eᵢ = mean entropy of σ(oᵢ⁽ᵘ⁾(xₙ))
//! ```
//!
//! Models are updated one at a time; while model `i` trains, its peers and its
//! original are constants. The weights are recomputed from the current updated
//! models at the start of each round and are never differentiated.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, param, shape, Result};
use crate::nn::{entropy, softmax_rows, Gradients, MlpModel, OptimizerState};

/// Frozen originals and their trainable copies.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    originals: Vec<MlpModel>,
    updated: Vec<MlpModel>,
}

impl EnsembleState {
    /// Starts an expansion: every updated model is an exact copy of its original.
    pub fn new(originals: Vec<MlpModel>) -> Result<Self> {
        let updated = originals.clone();
        Self::from_parts(originals, updated)
    }

    pub fn from_parts(originals: Vec<MlpModel>, updated: Vec<MlpModel>) -> Result<Self> {
        if originals.len() < 2 {
            return Err(input(format!(
                "expansion needs at least two source models, got {}",
                originals.len()
            )));
        }
        if originals.len() != updated.len() {
            return Err(shape(format!(
                "{} originals but {} updated models",
                originals.len(),
                updated.len()
            )));
        }
        let (d, c) = (originals[0].input_dim(), originals[0].num_classes());
        if let Some(k) = originals
            .iter()
            .chain(&updated)
            .position(|m| m.input_dim() != d || m.num_classes() != c)
        {
            return Err(shape(format!(
                "model {} does not share input_dim {d} and {c} classes",
                k % originals.len()
            )));
        }
        Ok(Self { originals, updated })
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.originals[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.originals[0].num_classes()
    }

    pub fn originals(&self) -> &[MlpModel] {
        &self.originals
    }

    pub fn updated(&self) -> &[MlpModel] {
        &self.updated
    }

    pub fn into_parts(self) -> (Vec<MlpModel>, Vec<MlpModel>) {
        (self.originals, self.updated)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(input(format!(
                "model index {i} out of range for {} models",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Trade-off, temperatures, and optimizer settings of an expansion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// λ, the weight of the bias term.
    pub lambda: f64,
    /// T, applied to logits in both alignment losses.
    pub temperature: f64,
    /// T₀, the temperature of the entropy softmax that yields the weights.
    pub weight_temperature: f64,
    /// Compute the entropies on `σ(o/T)` instead of `σ(o)`.
    pub entropy_at_alignment_temperature: bool,
    /// Number of update rounds; each round gives every model one epoch.
    pub epochs: usize,
    /// `None` trains on the full new-domain set each step.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            temperature: 3.0,
            weight_temperature: 0.1,
            entropy_at_alignment_temperature: false,
            epochs: 20,
            batch_size: Some(64),
            learning_rate: crate::nn::DEFAULT_LEARNING_RATE,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(param(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        for (name, v) in [
            ("temperature", self.temperature),
            ("weight_temperature", self.weight_temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == Some(0) {
            return Err(param("batch_size must be positive"));
        }
        OptimizerState::with_momentum(self.learning_rate, self.momentum)?;
        Ok(())
    }

    pub fn entropy_temperature(&self) -> f64 {
        if self.entropy_at_alignment_temperature {
            self.temperature
        } else {
            1.0
        }
    }
}

/// Mean entropies and the derived importance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub entropies: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Mean Shannon entropy (nats) of the model's `σ(o/t)` over the rows of `data`.
pub fn mean_entropy(model: &MlpModel, data: ArrayView2<'_, f64>, t: f64) -> Result<f64> {
    if data.nrows() == 0 {
        return Err(input("mean entropy of an empty dataset"));
    }
    let probs = softmax_rows(model.logits(data)?.view(), t)?;
    let total: f64 = probs
        .axis_iter(Axis(0))
        .map(|row| entropy(row.as_slice().expect("softmax output is contiguous")))
        .sum();
    Ok(total / data.nrows() as f64)
}

/// `wᵢ = exp(Eᵢ/T₀) / Σⱼ exp(Eⱼ/T₀)`, max-subtracted.
pub fn compute_weights(entropies: &[f64], t0: f64) -> Result<WeightVector> {
    if entropies.len() < 2 {
        return Err(input("weights need at least two entropies"));
    }
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(param(format!(
            "weight temperature must be positive, got {t0}"
        )));
    }
    if entropies.iter().any(|e| !e.is_finite()) {
        return Err(input("entropies must be finite"));
    }
    let max = entropies.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e));
    let exps: Vec<f64> = entropies.iter().map(|&e| ((e - max) / t0).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(WeightVector {
        entropies: entropies.to_vec(),
        weights: exps.into_iter().map(|v| v / sum).collect(),
    })
}

/// Weights from the current updated models of `ensemble`.
pub fn ensemble_weights(
    ensemble: &EnsembleState,
    data: ArrayView2<'_, f64>,
    hp: &Hyperparams,
) -> Result<WeightVector> {
    let entropies = ensemble
        .updated
        .iter()
        .map(|m| mean_entropy(m, data, hp.entropy_temperature()))
        .collect::<Result<Vec<_>>>()?;
    compute_weights(&entropies, hp.weight_temperature)
}

/// Softened pCPDs of the live model together with the forward cache.
struct LiveForward {
    probs: Array2<f64>,
    cache: crate::nn::ForwardCache,
}

fn live_forward(model: &MlpModel, batch: ArrayView2<'_, f64>, t: f64) -> Result<LiveForward> {
    let (logits, cache) = model.forward_logits(batch)?;
    Ok(LiveForward {
        probs: softmax_rows(logits.view(), t)?,
        cache,
    })
}

fn softened(model: &MlpModel, batch: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
    softmax_rows(model.logits(batch)?.view(), t)
}

/// `1/N Σₙ Σₖ ‖pₙ − qₖₙ‖²` and its gradient with respect to `p`.
fn squared_distance_sum(p: &Array2<f64>, targets: &[Array2<f64>]) -> (f64, Array2<f64>) {
    let n = p.nrows() as f64;
    let mut loss = 0.0;
    let mut d_probs = Array2::zeros(p.raw_dim());
    for q in targets {
        let diff = p - q;
        loss += diff.iter().map(|v| v * v).sum::<f64>();
        d_probs.scaled_add(2.0 / n, &diff);
    }
    (loss / n, d_probs)
}

/// Pulls `∂L/∂p` back through `p = softmax(z / t)`:
/// `∂L/∂zₖ = pₖ (gₖ − Σ_c p_c g_c) / t`.
fn softmax_backward(p: &Array2<f64>, d_probs: &Array2<f64>, t: f64) -> Array2<f64> {
    let mut dz = Array2::zeros(p.raw_dim());
    for ((prow, grow), mut drow) in p
        .axis_iter(Axis(0))
        .zip(d_probs.axis_iter(Axis(0)))
        .zip(dz.axis_iter_mut(Axis(0)))
    {
        let dot: f64 = prow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
        for ((d, &pk), &gk) in drow.iter_mut().zip(prow.iter()).zip(grow.iter()) {
            *d = pk * (gk - dot) / t;
        }
    }
    dz
}

fn check_batch(ensemble: &EnsembleState, i: usize, batch: &ArrayView2<'_, f64>) -> Result<()> {
    ensemble.check_index(i)?;
    if batch.nrows() == 0 {
        return Err(input("alignment losses need a nonempty batch"));
    }
    Ok(())
}

/// Bias (alignment) loss of updated model `i` against its updated peers.
/// Gradients flow only into `updated[i]`.
pub fn bias_loss(
    ensemble: &EnsembleState,
    i: usize,
    batch: ArrayView2<'_, f64>,
    t: f64,
) -> Result<(f64, Gradients)> {
    check_batch(ensemble, i, &batch)?;
    let live = live_forward(&ensemble.updated[i], batch, t)?;
    let peers = peer_targets(ensemble, i, batch, t)?;
    let (loss, d_probs) = squared_distance_sum(&live.probs, &peers);
    let dz = softmax_backward(&live.probs, &d_probs, t);
    Ok((loss, ensemble.updated[i].backward(&live.cache, dz.view())?))
}

/// Preservation loss of updated model `i` against its frozen original.
pub fn preservation_loss(
    ensemble: &EnsembleState,
    i: usize,
    batch: ArrayView2<'_, f64>,
    t: f64,
) -> Result<(f64, Gradients)> {
    check_batch(ensemble, i, &batch)?;
    let live = live_forward(&ensemble.updated[i], batch, t)?;
    let original = softened(&ensemble.originals[i], batch, t)?;
    let (loss, d_probs) = squared_distance_sum(&live.probs, std::slice::from_ref(&original));
    let dz = softmax_backward(&live.probs, &d_probs, t);
    Ok((loss, ensemble.updated[i].backward(&live.cache, dz.view())?))
}

fn peer_targets(
    ensemble: &EnsembleState,
    i: usize,
    batch: ArrayView2<'_, f64>,
    t: f64,
) -> Result<Vec<Array2<f64>>> {
    ensemble
        .updated
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, m)| softened(m, batch, t))
        .collect()
}

/// Value of the combined objective and of its two terms.
#[derive(Debug, Clone)]
pub struct OverallLoss {
    pub total: f64,
    pub preservation: f64,
    pub bias: f64,
    pub grads: Gradients,
}

/// `L_org + λ·wᵢ·L_bias` for updated model `i`, with gradients combined linearly.
pub fn overall_loss(
    ensemble: &EnsembleState,
    i: usize,
    batch: ArrayView2<'_, f64>,
    weights: &WeightVector,
    hp: &Hyperparams,
) -> Result<OverallLoss> {
    check_batch(ensemble, i, &batch)?;
    if weights.weights.len() != ensemble.len() {
        return Err(shape(format!(
            "{} weights for {} models",
            weights.weights.len(),
            ensemble.len()
        )));
    }
    let t = hp.temperature;
    let coefficient = hp.lambda * weights.weights[i];
    let live = live_forward(&ensemble.updated[i], batch, t)?;

    let original = softened(&ensemble.originals[i], batch, t)?;
    let (preservation, mut d_probs) =
        squared_distance_sum(&live.probs, std::slice::from_ref(&original));

    let peers = peer_targets(ensemble, i, batch, t)?;
    let (bias, d_bias) = squared_distance_sum(&live.probs, &peers);
    d_probs.scaled_add(coefficient, &d_bias);

    let dz = softmax_backward(&live.probs, &d_probs, t);
    let grads = ensemble.updated[i].backward(&live.cache, dz.view())?;
    Ok(OverallLoss {
        total: preservation + coefficient * bias,
        preservation,
        bias,
        grads,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub model_index: usize,
    /// Batch-size weighted means over the model's epoch, measured before each step.
    #[serde(rename = "mean_L_org")]
    pub mean_l_org: f64,
    #[serde(rename = "mean_L_bias")]
    pub mean_l_bias: f64,
    #[serde(rename = "mean_L_overall")]
    pub mean_l_overall: f64,
    #[serde(rename = "E_i")]
    pub entropy: f64,
    #[serde(rename = "w_i")]
    pub weight: f64,
}

/// Stateful driver: owns the ensemble, one optimizer per model, and the
/// shuffling stream.
#[derive(Debug, Clone)]
pub struct Expansion {
    ensemble: EnsembleState,
    hp: Hyperparams,
    optimizers: Vec<OptimizerState>,
    rng: ChaCha8Rng,
    round: usize,
}

impl Expansion {
    pub fn new(ensemble: EnsembleState, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        let optimizers = (0..ensemble.len())
            .map(|_| OptimizerState::with_momentum(hp.learning_rate, hp.momentum))
            .collect::<Result<Vec<_>>>()?;
        let rng = ChaCha8Rng::seed_from_u64(hp.seed);
        Ok(Self {
            ensemble,
            hp,
            optimizers,
            rng,
            round: 0,
        })
    }

    pub fn ensemble(&self) -> &EnsembleState {
        &self.ensemble
    }

    pub fn into_ensemble(self) -> EnsembleState {
        self.ensemble
    }

    /// Recomputes the weights, then gives models `0..m` one epoch each, in order.
    pub fn round(
        &mut self,
        new_data: ArrayView2<'_, f64>,
    ) -> Result<(WeightVector, Vec<RoundRecord>)> {
        if new_data.nrows() == 0 {
            return Err(input("new-domain data is empty"));
        }
        if new_data.ncols() != self.ensemble.input_dim() {
            return Err(shape(format!(
                "new-domain data has {} features, models expect {}",
                new_data.ncols(),
                self.ensemble.input_dim()
            )));
        }
        let weights = ensemble_weights(&self.ensemble, new_data, &self.hp)?;
        let n = new_data.nrows();
        let batch_size = self.hp.batch_size.unwrap_or(n).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut records = Vec::with_capacity(self.ensemble.len());

        for i in 0..self.ensemble.len() {
            order.shuffle(&mut self.rng);
            let (mut org, mut bias, mut total) = (0.0, 0.0, 0.0);
            for chunk in order.chunks(batch_size) {
                let batch = new_data.select(Axis(0), chunk);
                let step = overall_loss(&self.ensemble, i, batch.view(), &weights, &self.hp)?;
                let share = chunk.len() as f64 / n as f64;
                org += share * step.preservation;
                bias += share * step.bias;
                total += share * step.total;
                self.optimizers[i].apply(&mut self.ensemble.updated[i], &step.grads)?;
            }
            records.push(RoundRecord {
                round: self.round,
                model_index: i,
                mean_l_org: org,
                mean_l_bias: bias,
                mean_l_overall: total,
                entropy: weights.entropies[i],
                weight: weights.weights[i],
            });
        }
        self.round += 1;
        Ok((weights, records))
    }
}

/// Everything an expansion run produces.
#[derive(Debug, Clone)]
pub struct ExpansionOutcome {
    pub ensemble: EnsembleState,
    pub log: Vec<RoundRecord>,
    /// Weights used in each round.
    pub weights: Vec<WeightVector>,
}

impl ExpansionOutcome {
    /// `Σᵢ mean_L_overall` for every round.
    pub fn round_totals(&self) -> Vec<f64> {
        let mut totals: Vec<f64> = Vec::new();
        for rec in &self.log {
            if totals.len() <= rec.round {
                totals.resize(rec.round + 1, 0.0);
            }
            totals[rec.round] += rec.mean_l_overall;
        }
        totals
    }
}

/// One update round of a fresh run: the weights plus the epoch log.
pub fn update_round(
    ensemble: EnsembleState,
    new_data: ArrayView2<'_, f64>,
    hp: &Hyperparams,
) -> Result<(EnsembleState, WeightVector, Vec<RoundRecord>)> {
    let mut run = Expansion::new(ensemble, hp.clone())?;
    let (weights, records) = run.round(new_data)?;
    Ok((run.into_ensemble(), weights, records))
}

/// Runs `hp.epochs` rounds.
pub fn expand(
    ensemble: EnsembleState,
    new_data: ArrayView2<'_, f64>,
    hp: &Hyperparams,
) -> Result<ExpansionOutcome> {
    let mut run = Expansion::new(ensemble, hp.clone())?;
    let mut log = Vec::new();
    let mut weights = Vec::with_capacity(hp.epochs);
    for _ in 0..hp.epochs {
        let (w, records) = run.round(new_data)?;
        weights.push(w);
        log.extend(records);
    }
    Ok(ExpansionOutcome {
        ensemble: run.into_ensemble(),
        log,
        weights,
    })
}
