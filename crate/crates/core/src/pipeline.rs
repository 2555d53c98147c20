//! In-memory experiment driver: synthesize, split, pretrain, expand, evaluate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_domains, split, DomainDataset, SplitSpec, Standardizer, SyntheticDomainConfig,
};
use crate::error::{Error, Result};
use crate::expansion::{expand, EnsembleState, ExpansionOutcome, Hyperparams};
use crate::fusion::{accuracy, evaluate_expanded, EvaluationReport, FusionMethod, PredictionBatch};
use crate::nn::{train_classifier, MlpModel, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    #[default]
    None,
    /// Each domain is z-scored with statistics fitted on its own training split.
    PerDomain,
}

/// A domain's train/test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSplit {
    pub name: String,
    pub train: DomainDataset,
    pub test: DomainDataset,
}

/// Splits every domain with a per-domain seed and applies the standardization policy.
pub fn prepare_domains(
    domains: &[DomainDataset],
    spec: &SplitSpec,
    standardization: Standardization,
) -> Result<Vec<DomainSplit>> {
    domains
        .iter()
        .enumerate()
        .map(|(k, ds)| {
            let per_domain = SplitSpec {
                seed: spec.seed.wrapping_add(k as u64),
                ..*spec
            };
            let parts = split(ds, &per_domain)?;
            let (train, test) = match standardization {
                Standardization::None => (parts.train, parts.test),
                Standardization::PerDomain => {
                    let stats = Standardizer::fit(&parts.train)?;
                    (stats.apply(&parts.train)?, stats.apply(&parts.test)?)
                }
            };
            Ok(DomainSplit {
                name: ds.name().to_owned(),
                train: train.renamed(ds.name()),
                test: test.renamed(ds.name()),
            })
        })
        .collect()
}

/// Initialization and shuffling stream of source model `index`.
pub fn model_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Trains one classifier per labelled training set, each on its own domain only.
/// Model `i` draws its initialization and shuffling from stream `i` of `seed`.
pub fn pretrain_sources(
    train_sets: &[DomainDataset],
    num_classes: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<MlpModel>, Vec<TrainReport>)> {
    check_shared_labels(train_sets, num_classes)?;
    let mut models = Vec::with_capacity(train_sets.len());
    let mut reports = Vec::with_capacity(train_sets.len());
    for (i, ds) in train_sets.iter().enumerate() {
        let labels = ds.labels().expect("checked above");
        let mut rng = model_rng(seed, i);
        let mut model = MlpModel::init(ds.feature_dim(), &cfg.hidden, num_classes, &mut rng)?;
        let report = train_classifier(&mut model, ds.features().view(), labels, cfg, &mut rng)?;
        log::info!(
            "pretrained {} on {} samples: train accuracy {:.4}",
            ds.name(),
            ds.len(),
            report.train_accuracy
        );
        models.push(model);
        reports.push(report);
    }
    Ok((models, reports))
}

/// Source domains must be labelled, share a feature width, and cover the same classes.
pub fn check_shared_labels(train_sets: &[DomainDataset], num_classes: usize) -> Result<()> {
    let first = train_sets
        .first()
        .ok_or_else(|| Error::Config("no source training sets".into()))?;
    let reference = first
        .label_set()
        .ok_or_else(|| Error::Config(format!("{} is unlabelled", first.name())))?;
    for ds in train_sets {
        let set = ds
            .label_set()
            .ok_or_else(|| Error::Config(format!("{} is unlabelled", ds.name())))?;
        if set != reference {
            return Err(Error::Config(format!(
                "{} has label set {set:?}, {} has {reference:?}",
                ds.name(),
                first.name()
            )));
        }
        if ds.feature_dim() != first.feature_dim() {
            return Err(Error::Config(format!(
                "{} has {} features, {} has {}",
                ds.name(),
                ds.feature_dim(),
                first.name(),
                first.feature_dim()
            )));
        }
        if set.last().is_some_and(|&c| c >= num_classes) {
            return Err(Error::Config(format!(
                "{} has labels beyond the {num_classes} configured classes",
                ds.name()
            )));
        }
    }
    Ok(())
}

/// Configuration of a full synthetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub synthetic: SyntheticDomainConfig,
    pub split: SplitSpec,
    pub standardization: Standardization,
    pub pretrain: TrainConfig,
    pub pretrain_seed: u64,
    pub hyperparams: Hyperparams,
}

/// Pretraining preset for the synthetic benchmark: plain SGD at the library
/// default rate underfits 30 epochs, so it uses a larger rate with momentum.
pub fn benchmark_pretrain() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.02,
        momentum: 0.9,
        ..TrainConfig::default()
    }
}

/// Expansion preset for the synthetic benchmark: 30 rounds at rate 0.5, so the
/// softened-probability losses (whose gradients are small) actually converge.
pub fn benchmark_hyperparams() -> Hyperparams {
    Hyperparams {
        learning_rate: 0.5,
        epochs: 30,
        ..Hyperparams::default()
    }
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticDomainConfig::default(),
            split: SplitSpec::default(),
            standardization: Standardization::None,
            pretrain: benchmark_pretrain(),
            pretrain_seed: 0,
            hyperparams: benchmark_hyperparams(),
        }
    }
}

/// Seeds of every random stream of a run, derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub synthetic: u64,
    pub split: u64,
    pub pretrain: u64,
    pub expansion: u64,
}

impl SeedPlan {
    pub fn from_master(seed: u64) -> Self {
        let derived = |k: u64| seed.wrapping_mul(31).wrapping_add(k);
        Self {
            synthetic: seed,
            split: derived(1),
            pretrain: derived(2),
            expansion: derived(3),
        }
    }
}

impl BenchmarkConfig {
    /// Reseeds every random stream of the run from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let plan = SeedPlan::from_master(seed);
        self.synthetic.seed = plan.synthetic;
        self.split.seed = plan.split;
        self.pretrain_seed = plan.pretrain;
        self.hyperparams.seed = plan.expansion;
        self
    }
}

/// Results of one synthetic run.
#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub domains: Vec<DomainSplit>,
    pub pretrain_reports: Vec<TrainReport>,
    pub expansion: ExpansionOutcome,
    /// Reports for baseline, M1, and M2, in that order; the new domain comes first.
    pub reports: Vec<EvaluationReport>,
    /// Test accuracy of each original model on the new domain.
    pub original_new_domain_accuracy: Vec<f64>,
}

impl BenchmarkOutcome {
    pub fn report(&self, method: FusionMethod) -> &EvaluationReport {
        self.reports
            .iter()
            .find(|r| r.method == method)
            .expect("every method is evaluated")
    }

    pub fn new_domain(&self) -> &DomainSplit {
        self.domains.last().expect("the new domain is last")
    }
}

/// Runs the whole synthetic pipeline. Expansion sees only the original models
/// and the unlabelled new-domain training split.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkOutcome> {
    let generated = generate_domains(&cfg.synthetic)?;
    let domains = prepare_domains(&generated, &cfg.split, cfg.standardization)?;
    let (new_domain, sources) = domains.split_last().expect("at least three domains");
    let source_train: Vec<DomainDataset> = sources.iter().map(|d| d.train.clone()).collect();
    let (originals, pretrain_reports) = pretrain_sources(
        &source_train,
        cfg.synthetic.num_classes,
        &cfg.pretrain,
        cfg.pretrain_seed,
    )?;

    let unlabelled = new_domain.train.without_labels();
    let expansion = expand(
        EnsembleState::new(originals.clone())?,
        unlabelled.features().view(),
        &cfg.hyperparams,
    )?;

    let mut test_sets = vec![new_domain.test.clone()];
    test_sets.extend(sources.iter().map(|d| d.test.clone()));
    let updated = expansion.ensemble.updated();
    let first_weights = expansion.weights.first();
    let reports = FusionMethod::ALL
        .iter()
        .map(|&method| {
            let mut report = evaluate_expanded(method, &originals, updated, &test_sets)?;
            if let Some(w) = first_weights {
                report.entropies = w.entropies.clone();
                report.weights = w.weights.clone();
            }
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;

    let new_labels = new_domain
        .test
        .labels()
        .expect("synthetic domains are labelled");
    let original_new_domain_accuracy = originals
        .iter()
        .map(|m| {
            let pred = PredictionBatch::from_scores(m.logits(new_domain.test.features().view())?);
            accuracy(&pred, new_labels)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(BenchmarkOutcome {
        domains,
        pretrain_reports,
        expansion,
        reports,
        original_new_domain_accuracy,
    })
}
