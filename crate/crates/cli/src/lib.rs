//! Command-line driver: `synth`, `pretrain`, `expand`, `evaluate`, and
//! `gradcheck`, each configured by one JSON document.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Paths, RunConfig};
pub use error::{exit, CliError, CliResult};
pub use manifest::{audit_source_free, load_manifest, Manifest};

#[derive(Debug, Parser)]
#[command(
    name = "domexp",
    version,
    about = "Source-free multi-source domain expansion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON); built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `paths.out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log filter, e.g. `info` or `domexp_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic domains as train/test CSVs.
    Synth,
    /// Train one classifier per source domain.
    Pretrain,
    /// Update the models on unlabelled new-domain data.
    Expand,
    /// Fuse and score on every test set.
    Evaluate,
    /// Compare analytic gradients with finite differences.
    Gradcheck,
}

impl Cli {
    pub fn run_config(&self) -> CliResult<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        Ok(cfg.resolved(self.out.clone(), self.seed))
    }
}

/// Runs one subcommand and returns the lines to print on success.
pub fn run(command: Command, cfg: &RunConfig) -> CliResult<Vec<String>> {
    let manifest_line = |p: &PathBuf| format!("manifest {}", p.display());
    match command {
        Command::Synth => {
            let out = commands::synth(cfg)?;
            let mut lines: Vec<String> = out
                .files
                .iter()
                .map(|f| format!("wrote {}", f.display()))
                .collect();
            lines.push(manifest_line(&out.manifest));
            Ok(lines)
        }
        Command::Pretrain => {
            let out = commands::pretrain(cfg)?;
            let mut lines: Vec<String> = out
                .summaries
                .iter()
                .map(|s| {
                    format!(
                        "model {} ({}): train accuracy {:.4}",
                        s.model_index, s.domain, s.train_accuracy
                    )
                })
                .collect();
            lines.push(manifest_line(&out.manifest));
            Ok(lines)
        }
        Command::Expand => {
            let out = commands::expand_models(cfg)?;
            let totals = out.expansion.round_totals();
            let mut lines = Vec::new();
            if let (Some(first), Some(last)) = (totals.first(), totals.last()) {
                lines.push(format!(
                    "{} rounds: total overall loss {first:.6} -> {last:.6}",
                    totals.len()
                ));
            }
            if let Some(w) = out.expansion.weights.last() {
                lines.push(format!("final weights {:?}", w.weights));
            }
            lines.push(manifest_line(&out.manifest));
            Ok(lines)
        }
        Command::Evaluate => {
            let out = commands::evaluate(cfg)?;
            let mut lines: Vec<String> = out.table.lines().map(str::to_owned).collect();
            if let Some(rho) = out.entropy_accuracy.spearman {
                lines.push(format!("entropy/accuracy Spearman {rho:.4}"));
            }
            lines.push(manifest_line(&out.manifest));
            Ok(lines)
        }
        Command::Gradcheck => {
            let out = commands::gradcheck(cfg)?;
            let tol = out.report.config.tolerance;
            let lines: Vec<String> = out
                .report
                .terms
                .iter()
                .map(|t| {
                    let verdict = if t.passed { "ok" } else { "FAIL" };
                    format!(
                        "{:<18} max relative error {:.3e} (tolerance {tol:e}) {verdict}",
                        t.term.name(),
                        t.max_error
                    )
                })
                .collect();
            if !out.report.passed {
                let failing: Vec<String> = out
                    .report
                    .terms
                    .iter()
                    .filter(|t| !t.passed)
                    .map(|t| format!("{} ({:.3e})", t.term.name(), t.max_error))
                    .collect();
                return Err(CliError::Numeric(format!(
                    "gradient check exceeded tolerance {tol:e}: {}",
                    failing.join(", ")
                )));
            }
            let mut lines = lines;
            lines.push(manifest_line(&out.manifest));
            Ok(lines)
        }
    }
}
