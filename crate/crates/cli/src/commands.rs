//! The five subcommands. Each reads only what its stage needs, writes its
//! artifacts under the output directory, and records both in a manifest.

use std::path::{Path, PathBuf};

use domexp_core::data::{generate_domains, load_csv, DomainDataset};
use domexp_core::expansion::{ensemble_weights, expand, ExpansionOutcome};
use domexp_core::fusion::{
    entropy_accuracy_report, evaluate_expanded, format_table, EntropyAccuracyReport, Probe,
};
use domexp_core::pipeline::{prepare_domains, pretrain_sources};
use domexp_core::verify::{run_gradient_suite, GradcheckReport};
use domexp_core::{EnsembleState, EvaluationReport, FusionMethod, MlpModel};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{core_at, io_at, CliError, CliResult};
use crate::manifest::{write_json, write_text, Recorder};

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))
}

fn read_dataset(path: &Path, rec: &mut Recorder) -> CliResult<DomainDataset> {
    if !path.exists() {
        return Err(CliError::Input(format!(
            "missing data file {}",
            path.display()
        )));
    }
    let ds = load_csv(path).map_err(core_at(path))?;
    rec.input(path)?;
    Ok(ds)
}

fn read_model(path: &Path, rec: &mut Recorder) -> CliResult<MlpModel> {
    if !path.exists() {
        return Err(CliError::Input(format!(
            "missing model file {}",
            path.display()
        )));
    }
    let model = MlpModel::load(path).map_err(core_at(path))?;
    rec.input(path)?;
    Ok(model)
}

fn write_model(model: &MlpModel, path: &Path, rec: &mut Recorder) -> CliResult<()> {
    let mut text = model.to_json()?;
    text.push('\n');
    write_text(path, &text)?;
    rec.output(path)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| CliError::Numeric(e.to_string()))?);
        text.push('\n');
    }
    write_text(path, &text)
}

/// Dataset name for reports: the file stem without a `_train`/`_test` suffix.
fn domain_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    stem.strip_suffix("_test")
        .or_else(|| stem.strip_suffix("_train"))
        .unwrap_or(&stem)
        .to_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Generates the synthetic domains and writes a train and a test CSV for each.
pub fn synth(cfg: &RunConfig) -> CliResult<SynthOutcome> {
    let synthetic = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| CliError::Config("synth needs a `synthetic` section".into()))?;
    cfg.num_sources()?;
    let mut rec = Recorder::new("synth", cfg);
    let domains = generate_domains(synthetic)?;
    let splits = prepare_domains(&domains, &cfg.split, cfg.standardization)?;
    let (new_domain, sources) = splits.split_last().expect("generator emits the new domain");

    let mut targets: Vec<(&DomainDataset, PathBuf)> = Vec::new();
    let (train_paths, test_paths) = (cfg.source_train_paths()?, cfg.source_test_paths()?);
    for (k, s) in sources.iter().enumerate() {
        targets.push((&s.train, train_paths[k].clone()));
        targets.push((&s.test, test_paths[k].clone()));
    }
    targets.push((&new_domain.train, cfg.new_train_path()));
    targets.push((&new_domain.test, cfg.new_test_path()));

    let mut files = Vec::with_capacity(targets.len());
    for (ds, path) in targets {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        ds.write_csv(&path).map_err(core_at(&path))?;
        rec.output(&path)?;
        log::info!("wrote {} ({} samples)", path.display(), ds.len());
        files.push(path);
    }
    Ok(SynthOutcome {
        files,
        manifest: rec.finish()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct EpochRecord<'a> {
    model_index: usize,
    domain: &'a str,
    epoch: usize,
    loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainSummary {
    pub model_index: usize,
    pub domain: String,
    pub samples: usize,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub summaries: Vec<PretrainSummary>,
    pub manifest: PathBuf,
}

/// Trains one classifier per source domain on that domain's training CSV.
pub fn pretrain(cfg: &RunConfig) -> CliResult<PretrainOutcome> {
    let mut rec = Recorder::new("pretrain", cfg);
    let sets = cfg
        .source_train_paths()?
        .iter()
        .map(|p| read_dataset(p, &mut rec).map(|ds| ds.renamed(domain_name(p))))
        .collect::<CliResult<Vec<_>>>()?;
    let num_classes = match &cfg.synthetic {
        Some(s) => s.num_classes,
        None => sets
            .iter()
            .filter_map(|ds| ds.label_set().and_then(|s| s.last().copied()))
            .max()
            .map_or(0, |c| c + 1),
    };
    let (models, reports) = pretrain_sources(&sets, num_classes, &cfg.pretrain, cfg.pretrain_seed)?;

    let mut epochs = Vec::new();
    let mut summaries = Vec::with_capacity(models.len());
    for (i, ((model, report), ds)) in models.iter().zip(&reports).zip(&sets).enumerate() {
        write_model(model, &cfg.original_model_paths()?[i], &mut rec)?;
        for (epoch, &loss) in report.epoch_losses.iter().enumerate() {
            epochs.push(EpochRecord {
                model_index: i,
                domain: ds.name(),
                epoch,
                loss,
            });
        }
        summaries.push(PretrainSummary {
            model_index: i,
            domain: ds.name().to_owned(),
            samples: ds.len(),
            train_accuracy: report.train_accuracy,
        });
    }
    let log_path = cfg.logs_dir().join("pretrain.jsonl");
    write_jsonl(&log_path, &epochs)?;
    rec.output(&log_path)?;
    let summary_path = cfg.reports_dir().join("pretrain.json");
    write_json(&summary_path, &summaries)?;
    rec.output(&summary_path)?;
    Ok(PretrainOutcome {
        summaries,
        manifest: rec.finish()?,
    })
}

#[derive(Debug, Clone)]
pub struct ExpandOutcome {
    pub expansion: ExpansionOutcome,
    pub manifest: PathBuf,
}

/// Updates the original models on the unlabelled new-domain training CSV.
/// Reads nothing else: no source-domain path is ever opened here.
pub fn expand_models(cfg: &RunConfig) -> CliResult<ExpandOutcome> {
    let mut rec = Recorder::new("expand", cfg);
    let originals = cfg
        .original_model_paths()?
        .iter()
        .map(|p| read_model(p, &mut rec))
        .collect::<CliResult<Vec<_>>>()?;
    let new_train = read_dataset(&cfg.new_train_path(), &mut rec)?.without_labels();
    let ensemble = EnsembleState::new(originals)?;
    if new_train.feature_dim() != ensemble.input_dim() {
        return Err(CliError::Input(format!(
            "new-domain data has {} features, models expect {}",
            new_train.feature_dim(),
            ensemble.input_dim()
        )));
    }
    let outcome = expand(ensemble, new_train.features().view(), &cfg.hyperparams)?;
    for (model, path) in outcome
        .ensemble
        .updated()
        .iter()
        .zip(cfg.updated_model_paths()?)
    {
        write_model(model, &path, &mut rec)?;
    }
    let log_path = cfg.logs_dir().join("expand.jsonl");
    write_jsonl(&log_path, &outcome.log)?;
    rec.output(&log_path)?;
    Ok(ExpandOutcome {
        expansion: outcome,
        manifest: rec.finish()?,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub reports: Vec<EvaluationReport>,
    pub table: String,
    pub entropy_accuracy: EntropyAccuracyReport,
    pub manifest: PathBuf,
}

/// Scores every configured fusion method on the new-domain and source test sets.
pub fn evaluate(cfg: &RunConfig) -> CliResult<EvaluateOutcome> {
    if cfg.fusion_methods.is_empty() {
        return Err(CliError::Config("no fusion methods to evaluate".into()));
    }
    let mut rec = Recorder::new("evaluate", cfg);
    let originals = cfg
        .original_model_paths()?
        .iter()
        .map(|p| read_model(p, &mut rec))
        .collect::<CliResult<Vec<_>>>()?;
    let needs_updated = cfg
        .fusion_methods
        .iter()
        .any(|&m| m != FusionMethod::Baseline);
    let updated = if needs_updated {
        cfg.updated_model_paths()?
            .iter()
            .map(|p| read_model(p, &mut rec))
            .collect::<CliResult<Vec<_>>>()?
    } else {
        originals.clone()
    };

    let mut test_paths = vec![cfg.new_test_path()];
    test_paths.extend(cfg.source_test_paths()?);
    let test_sets = test_paths
        .iter()
        .map(|p| read_dataset(p, &mut rec).map(|ds| ds.renamed(domain_name(p))))
        .collect::<CliResult<Vec<_>>>()?;

    // Uncertainty of the original models on the new domain, reported alongside.
    let weights = ensemble_weights(
        &EnsembleState::new(originals.clone())?,
        test_sets[0].features().view(),
        &cfg.hyperparams,
    )?;

    let mut reports = Vec::with_capacity(cfg.fusion_methods.len());
    for &method in &cfg.fusion_methods {
        let mut report = evaluate_expanded(method, &originals, &updated, &test_sets)?;
        report.entropies = weights.entropies.clone();
        report.weights = weights.weights.clone();
        let path = cfg
            .reports_dir()
            .join(format!("{}.json", method.file_stem()));
        write_text(&path, &(report.to_json()? + "\n"))?;
        rec.output(&path)?;
        reports.push(report);
    }
    let table = format_table(&reports);
    let table_path = cfg.reports_dir().join("table.txt");
    write_text(&table_path, &table)?;
    rec.output(&table_path)?;

    let names: Vec<String> = (0..originals.len())
        .map(|i| format!("original_{i}"))
        .collect();
    let probes: Vec<Probe<'_>> = originals
        .iter()
        .zip(&names)
        .flat_map(|(model, name)| {
            test_sets.iter().map(move |data| Probe {
                model_name: name,
                model,
                data,
            })
        })
        .collect();
    let entropy_accuracy = entropy_accuracy_report(&probes)?;
    let ea_path = cfg.reports_dir().join("entropy_accuracy.json");
    write_json(&ea_path, &entropy_accuracy)?;
    rec.output(&ea_path)?;

    Ok(EvaluateOutcome {
        reports,
        table,
        entropy_accuracy,
        manifest: rec.finish()?,
    })
}

#[derive(Debug, Clone)]
pub struct GradcheckOutcome {
    pub report: GradcheckReport,
    pub manifest: PathBuf,
}

/// Runs the finite-difference suite and writes its report. A failing term is
/// not an error here; the caller decides the exit status from `report.passed`.
pub fn gradcheck(cfg: &RunConfig) -> CliResult<GradcheckOutcome> {
    let mut rec = Recorder::new("gradcheck", cfg);
    let report = run_gradient_suite(&cfg.gradcheck)?;
    let path = cfg.reports_dir().join("gradcheck.json");
    write_json(&path, &report)?;
    rec.output(&path)?;
    Ok(GradcheckOutcome {
        report,
        manifest: rec.finish()?,
    })
}
