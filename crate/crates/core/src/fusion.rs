//! Fusion of original and updated models, accuracy metrics, and reports.

use std::fmt::Write as _;

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{input, shape, Result};
use crate::expansion::mean_entropy;
use crate::nn::{argmax_rows, softmax_rows, MlpModel};

/// Class scores for a batch and their argmax (lowest index on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub scores: Array2<f64>,
    pub predicted: Vec<usize>,
}

impl PredictionBatch {
    pub fn from_scores(scores: Array2<f64>) -> Self {
        let predicted = argmax_rows(&scores);
        Self { scores, predicted }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    /// Sum of the originals' softmax scores.
    Baseline,
    /// Mean of the updated models' softmax scores.
    M1,
    /// Per class, the larger of each original/updated pair, summed over models.
    M2,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 3] = [FusionMethod::Baseline, FusionMethod::M1, FusionMethod::M2];

    pub fn label(self) -> &'static str {
        match self {
            FusionMethod::Baseline => "Base",
            FusionMethod::M1 => "M1",
            FusionMethod::M2 => "M2",
        }
    }

    pub fn file_stem(self) -> &'static str {
        match self {
            FusionMethod::Baseline => "baseline",
            FusionMethod::M1 => "m1",
            FusionMethod::M2 => "m2",
        }
    }
}

fn pcpds(models: &[MlpModel], batch: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
    if models.is_empty() {
        return Err(input("fusion needs at least one model"));
    }
    models
        .iter()
        .map(|m| softmax_rows(m.logits(batch)?.view(), 1.0))
        .collect()
}

fn summed(models: &[MlpModel], batch: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut probs = pcpds(models, batch)?.into_iter();
    let mut total = probs.next().expect("nonempty");
    for p in probs {
        total += &p;
    }
    Ok(total)
}

/// Average of the updated models' pCPDs.
pub fn fuse_m1(updated: &[MlpModel], batch: ArrayView2<'_, f64>) -> Result<PredictionBatch> {
    let mut scores = summed(updated, batch)?;
    scores /= updated.len() as f64;
    Ok(PredictionBatch::from_scores(scores))
}

/// `Σᵢ max(σ_c(updatedᵢ), σ_c(originalᵢ))` per class. Rows are not normalized;
/// only the argmax is meaningful.
pub fn fuse_m2(
    originals: &[MlpModel],
    updated: &[MlpModel],
    batch: ArrayView2<'_, f64>,
) -> Result<PredictionBatch> {
    if originals.len() != updated.len() {
        return Err(shape(format!(
            "{} originals but {} updated models",
            originals.len(),
            updated.len()
        )));
    }
    let orig = pcpds(originals, batch)?;
    let upd = pcpds(updated, batch)?;
    let mut scores = Array2::zeros(orig[0].raw_dim());
    for (o, u) in orig.iter().zip(&upd) {
        Zip::from(&mut scores)
            .and(o)
            .and(u)
            .for_each(|s, &a, &b| *s += a.max(b));
    }
    Ok(PredictionBatch::from_scores(scores))
}

/// Sum fusion of the unadapted originals.
pub fn fuse_baseline(
    originals: &[MlpModel],
    batch: ArrayView2<'_, f64>,
) -> Result<PredictionBatch> {
    Ok(PredictionBatch::from_scores(summed(originals, batch)?))
}

pub fn fuse(
    method: FusionMethod,
    originals: &[MlpModel],
    updated: &[MlpModel],
    batch: ArrayView2<'_, f64>,
) -> Result<PredictionBatch> {
    match method {
        FusionMethod::Baseline => fuse_baseline(originals, batch),
        FusionMethod::M1 => fuse_m1(updated, batch),
        FusionMethod::M2 => fuse_m2(originals, updated, batch),
    }
}

pub fn accuracy(pred: &PredictionBatch, labels: &[usize]) -> Result<f64> {
    if pred.predicted.len() != labels.len() {
        return Err(shape(format!(
            "{} predictions for {} labels",
            pred.predicted.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(input("accuracy of an empty set"));
    }
    let hits = pred
        .predicted
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-domain accuracies of one fusion method and their macro-average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: FusionMethod,
    pub per_domain_accuracy: IndexMap<String, f64>,
    pub expanded_accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entropies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<f64>,
}

impl EvaluationReport {
    /// Builds a report whose expanded accuracy is the unweighted mean over domains.
    pub fn from_accuracies(
        method: FusionMethod,
        per_domain_accuracy: IndexMap<String, f64>,
    ) -> Result<Self> {
        if per_domain_accuracy.is_empty() {
            return Err(input("a report needs at least one domain"));
        }
        let expanded_accuracy =
            per_domain_accuracy.values().sum::<f64>() / per_domain_accuracy.len() as f64;
        Ok(Self {
            method,
            per_domain_accuracy,
            expanded_accuracy,
            entropies: Vec::new(),
            weights: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Fuses with `method` and scores every labelled test set.
pub fn evaluate_expanded(
    method: FusionMethod,
    originals: &[MlpModel],
    updated: &[MlpModel],
    test_sets: &[DomainDataset],
) -> Result<EvaluationReport> {
    let mut per_domain = IndexMap::new();
    for ds in test_sets {
        let labels = ds
            .labels()
            .ok_or_else(|| input(format!("test set {} has no labels", ds.name())))?;
        if ds.is_empty() {
            return Err(input(format!("test set {} is empty", ds.name())));
        }
        let pred = fuse(method, originals, updated, ds.features().view())?;
        per_domain.insert(ds.name().to_owned(), accuracy(&pred, labels)?);
    }
    EvaluationReport::from_accuracies(method, per_domain)
}

/// Aligned text table with one row per domain plus an `Expanded` row and one
/// column per report, accuracies in percent.
pub fn format_table(reports: &[EvaluationReport]) -> String {
    let mut domains: Vec<&str> = Vec::new();
    for r in reports {
        for d in r.per_domain_accuracy.keys() {
            if !domains.contains(&d.as_str()) {
                domains.push(d);
            }
        }
    }
    let width = domains
        .iter()
        .map(|d| d.len())
        .chain([8])
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Domain");
    for r in reports {
        let _ = write!(out, " {:>8}", r.method.label());
    }
    out.push('\n');
    let cell =
        |v: Option<f64>| v.map_or_else(|| format!("{:>8}", "-"), |v| format!("{:>8.2}", 100.0 * v));
    for d in &domains {
        let _ = write!(out, "{:<width$}", d);
        for r in reports {
            let _ = write!(out, " {}", cell(r.per_domain_accuracy.get(*d).copied()));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<width$}", "Expanded");
    for r in reports {
        let _ = write!(out, " {}", cell(Some(r.expanded_accuracy)));
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyAccuracyPoint {
    pub model: String,
    pub probe: String,
    pub mean_entropy: f64,
    pub accuracy: f64,
}

/// Entropy/accuracy pairs and their Spearman rank correlation, `None` when either
/// variable is constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyAccuracyReport {
    pub points: Vec<EntropyAccuracyPoint>,
    pub spearman: Option<f64>,
    pub degenerate: bool,
}

/// A named model paired with a labelled probe set.
pub struct Probe<'a> {
    pub model_name: &'a str,
    pub model: &'a MlpModel,
    pub data: &'a DomainDataset,
}

pub fn entropy_accuracy_report(probes: &[Probe<'_>]) -> Result<EntropyAccuracyReport> {
    if probes.len() < 2 {
        return Err(input(
            "an entropy/accuracy relation needs at least two pairs",
        ));
    }
    let mut points = Vec::with_capacity(probes.len());
    for p in probes {
        let labels = p
            .data
            .labels()
            .ok_or_else(|| input(format!("probe set {} has no labels", p.data.name())))?;
        let batch = p.data.features().view();
        let pred = PredictionBatch::from_scores(p.model.logits(batch)?);
        points.push(EntropyAccuracyPoint {
            model: p.model_name.to_owned(),
            probe: p.data.name().to_owned(),
            mean_entropy: mean_entropy(p.model, batch, 1.0)?,
            accuracy: accuracy(&pred, labels)?,
        });
    }
    let entropies: Vec<f64> = points.iter().map(|p| p.mean_entropy).collect();
    let accuracies: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    let spearman = spearman(&entropies, &accuracies);
    Ok(EntropyAccuracyReport {
        points,
        degenerate: spearman.is_none(),
        spearman,
    })
}

/// Ranks starting at 1, ties receiving their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{softmax_temperature, Activation, DenseLayer};
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_models(m: usize, seed: u64) -> Vec<MlpModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| MlpModel::init(3, &[4], 4, &mut rng).unwrap())
            .collect()
    }

    fn batch(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 3), |(i, j)| ((i * 3 + j) as f64 * 1.3).sin() * 3.0)
    }

    fn bias_model(bias: Array1<f64>) -> MlpModel {
        let c = bias.len();
        MlpModel::new(vec![DenseLayer::new(
            Array2::zeros((c, 3)),
            bias,
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn pcpd(model: &MlpModel, row: &[f64]) -> Vec<f64> {
        let logits = model
            .logits(ArrayView2::from_shape((1, row.len()), row).unwrap())
            .unwrap();
        softmax_temperature(logits.row(0).as_slice().unwrap(), 1.0).unwrap()
    }

    #[test]
    fn single_model_m1_is_its_softmax() {
        let models = random_models(1, 1);
        let x = batch(4);
        let fused = fuse_m1(&models, x.view()).unwrap();
        let direct = softmax_rows(models[0].logits(x.view()).unwrap().view(), 1.0).unwrap();
        assert_eq!(fused.scores, direct);
    }

    #[test]
    fn opposite_models_average_to_half() {
        let a = bias_model(array![40.0, -40.0]);
        let b = bias_model(array![-40.0, 40.0]);
        let fused = fuse_m1(&[a, b], batch(1).view()).unwrap();
        assert!((fused.scores[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((fused.scores[[0, 1]] - 0.5).abs() < 1e-12);
        assert_eq!(fused.predicted, vec![0], "ties go to the lowest class");
    }

    #[test]
    fn fusion_matches_brute_force_oracles() {
        let originals = random_models(3, 2);
        let updated = random_models(3, 3);
        let x = batch(5);
        let m1 = fuse_m1(&updated, x.view()).unwrap();
        let m2 = fuse_m2(&originals, &updated, x.view()).unwrap();
        let base = fuse_baseline(&originals, x.view()).unwrap();
        for n in 0..5 {
            let row = x.row(n).to_vec();
            for c in 0..4 {
                let mut mean = 0.0;
                let mut maxsum = 0.0;
                let mut sum = 0.0;
                for i in 0..3 {
                    let pu = pcpd(&updated[i], &row);
                    let po = pcpd(&originals[i], &row);
                    mean += pu[c] / 3.0;
                    maxsum += if pu[c] > po[c] { pu[c] } else { po[c] };
                    sum += po[c];
                }
                assert!((m1.scores[[n, c]] - mean).abs() < 1e-12);
                assert!((m2.scores[[n, c]] - maxsum).abs() < 1e-12);
                assert!((base.scores[[n, c]] - sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn m2_scalar_case() {
        // original [0.7, 0.3], updated [0.4, 0.6]
        let original = bias_model(array![0.7f64.ln(), 0.3f64.ln()]);
        let updated = bias_model(array![0.4f64.ln(), 0.6f64.ln()]);
        let fused = fuse_m2(&[original], &[updated], batch(1).view()).unwrap();
        assert!((fused.scores[[0, 0]] - 0.7).abs() < 1e-12);
        assert!((fused.scores[[0, 1]] - 0.6).abs() < 1e-12);
        assert_eq!(fused.predicted, vec![0]);
    }

    #[test]
    fn m2_on_unchanged_models_agrees_with_m1_over_originals() {
        let originals = random_models(3, 4);
        let x = batch(8);
        let m2 = fuse_m2(&originals, &originals, x.view()).unwrap();
        let m1 = fuse_m1(&originals, x.view()).unwrap();
        assert_eq!(m2.predicted, m1.predicted);
    }

    #[test]
    fn identical_originals_share_the_single_model_argmax() {
        let model = random_models(1, 5).remove(0);
        let x = batch(6);
        let single = fuse_baseline(std::slice::from_ref(&model), x.view()).unwrap();
        let triple = fuse_baseline(&[model.clone(), model.clone(), model], x.view()).unwrap();
        assert_eq!(single.predicted, triple.predicted);
    }

    #[test]
    fn fusion_rejects_bad_inputs() {
        assert!(fuse_m1(&[], batch(1).view()).is_err());
        assert!(fuse_m2(&random_models(2, 6), &random_models(1, 7), batch(1).view()).is_err());
    }

    #[test]
    fn accuracy_counts_matches() {
        let pred =
            PredictionBatch::from_scores(array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.2, 0.8]]);
        assert_eq!(accuracy(&pred, &[0, 1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&pred, &[1, 0, 1, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&pred, &[0, 1, 0, 0]).unwrap(), 0.75);
        assert!(accuracy(&pred, &[0, 1]).is_err());
    }

    #[test]
    fn expanded_accuracy_is_macro_average() {
        let report = EvaluationReport::from_accuracies(
            FusionMethod::Baseline,
            [("a", 0.0), ("b", 1.0)]
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect(),
        )
        .unwrap();
        assert_eq!(report.expanded_accuracy, 0.5);
        let single = EvaluationReport::from_accuracies(
            FusionMethod::M1,
            [("x".to_owned(), 0.37)].into_iter().collect(),
        )
        .unwrap();
        assert_eq!(single.expanded_accuracy, 0.37);
    }

    #[test]
    fn spearman_extremes() {
        assert_eq!(spearman(&[0.2, 0.9], &[0.8, 0.1]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]), None);
        let tied = spearman(&[1.0, 2.0, 2.0, 3.0], &[4.0, 3.0, 3.0, 1.0]).unwrap();
        assert!((tied + 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_has_expanded_row() {
        let report = EvaluationReport::from_accuracies(
            FusionMethod::M2,
            [("new".to_owned(), 0.5), ("s0".to_owned(), 0.25)]
                .into_iter()
                .collect(),
        )
        .unwrap();
        let table = format_table(&[report]);
        assert_eq!(
            table,
            "Domain         M2\nnew         50.00\ns0          25.00\nExpanded    37.50\n"
        );
    }
}
