//! The run configuration document and the file layout it implies.

use std::path::{Path, PathBuf};

use domexp_core::nn::TrainConfig;
use domexp_core::pipeline::{benchmark_hyperparams, benchmark_pretrain, SeedPlan, Standardization};
use domexp_core::verify::GradcheckConfig;
use domexp_core::{FusionMethod, Hyperparams, SplitSpec, SyntheticDomainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, CliResult};

/// File locations. Every list may be left empty, in which case the standard
/// layout under `out_dir` is used; relative paths resolve against the working
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Labelled training CSV of each source domain.
    pub source_train: Vec<PathBuf>,
    /// Labelled test CSV of each source domain.
    pub source_test: Vec<PathBuf>,
    /// New-domain training CSV; labels, if present, are ignored.
    pub new_train: Option<PathBuf>,
    /// Labelled new-domain test CSV.
    pub new_test: Option<PathBuf>,
    pub original_models: Vec<PathBuf>,
    pub updated_models: Vec<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            source_train: Vec::new(),
            source_test: Vec::new(),
            new_train: None,
            new_test: None,
            original_models: Vec::new(),
            updated_models: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, every seed below is derived from this one; `null` keeps the
    /// individual seeds as written.
    pub seed: Option<u64>,
    pub paths: Paths,
    /// Required by `synth`; elsewhere it only supplies the source count and
    /// class count when the paths do not.
    pub synthetic: Option<SyntheticDomainConfig>,
    pub split: SplitSpec,
    pub standardization: Standardization,
    pub pretrain: TrainConfig,
    pub pretrain_seed: u64,
    pub hyperparams: Hyperparams,
    pub fusion_methods: Vec<FusionMethod>,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: Some(0),
            paths: Paths::default(),
            synthetic: Some(SyntheticDomainConfig::default()),
            split: SplitSpec::default(),
            standardization: Standardization::None,
            pretrain: benchmark_pretrain(),
            pretrain_seed: 0,
            hyperparams: benchmark_hyperparams(),
            fusion_methods: FusionMethod::ALL.to_vec(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides and expands the master seed, so the
    /// returned document states every seed explicitly.
    pub fn resolved(mut self, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        if let Some(out) = out {
            self.paths.out_dir = out;
        }
        if let Some(seed) = seed.or(self.seed) {
            let plan = SeedPlan::from_master(seed);
            self.seed = Some(seed);
            if let Some(s) = &mut self.synthetic {
                s.seed = plan.synthetic;
            }
            self.split.seed = plan.split;
            self.pretrain_seed = plan.pretrain;
            self.hyperparams.seed = plan.expansion;
            self.gradcheck.seed = seed;
        }
        self
    }

    /// Number of source domains, taken from the first of the explicit source
    /// paths, the model paths, or the synthetic config that is present.
    pub fn num_sources(&self) -> CliResult<usize> {
        let p = &self.paths;
        let m = [
            p.source_train.len(),
            p.original_models.len(),
            p.source_test.len(),
        ]
        .into_iter()
        .find(|&n| n > 0)
        .or_else(|| self.synthetic.as_ref().map(|s| s.sources.len()))
        .ok_or_else(|| CliError::Config("cannot tell how many source domains there are".into()))?;
        if m < 2 {
            return Err(CliError::Config(format!(
                "domain expansion needs at least two source domains, got {m}"
            )));
        }
        Ok(m)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths.out_dir.join("data")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.paths.out_dir.join("models")
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.paths.out_dir.join("logs")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.paths.out_dir.join("reports")
    }

    pub fn manifests_dir(&self) -> PathBuf {
        self.paths.out_dir.join("manifests")
    }

    fn listed_or(
        &self,
        listed: &[PathBuf],
        default: impl Fn(usize) -> PathBuf,
    ) -> CliResult<Vec<PathBuf>> {
        let m = self.num_sources()?;
        if listed.is_empty() {
            return Ok((0..m).map(default).collect());
        }
        if listed.len() != m {
            return Err(CliError::Config(format!(
                "{} paths listed for {m} source domains",
                listed.len()
            )));
        }
        Ok(listed.to_vec())
    }

    pub fn source_train_paths(&self) -> CliResult<Vec<PathBuf>> {
        let dir = self.data_dir();
        self.listed_or(&self.paths.source_train, |k| {
            dir.join(format!("source{k}_train.csv"))
        })
    }

    pub fn source_test_paths(&self) -> CliResult<Vec<PathBuf>> {
        let dir = self.data_dir();
        self.listed_or(&self.paths.source_test, |k| {
            dir.join(format!("source{k}_test.csv"))
        })
    }

    pub fn new_train_path(&self) -> PathBuf {
        self.paths
            .new_train
            .clone()
            .unwrap_or_else(|| self.data_dir().join("new_train.csv"))
    }

    pub fn new_test_path(&self) -> PathBuf {
        self.paths
            .new_test
            .clone()
            .unwrap_or_else(|| self.data_dir().join("new_test.csv"))
    }

    pub fn original_model_paths(&self) -> CliResult<Vec<PathBuf>> {
        let dir = self.models_dir();
        self.listed_or(&self.paths.original_models, |i| {
            dir.join(format!("original_{i}.json"))
        })
    }

    pub fn updated_model_paths(&self) -> CliResult<Vec<PathBuf>> {
        let dir = self.models_dir();
        self.listed_or(&self.paths.updated_models, |i| {
            dir.join(format!("updated_{i}.json"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert_eq!(serde_json::from_str::<RunConfig>("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"lambda": 1}"#).is_err());
    }

    #[test]
    fn master_seed_fills_every_stream() {
        let cfg = RunConfig::default().resolved(Some("x".into()), Some(4));
        let plan = SeedPlan::from_master(4);
        assert_eq!(cfg.paths.out_dir, PathBuf::from("x"));
        assert_eq!(cfg.synthetic.as_ref().unwrap().seed, plan.synthetic);
        assert_eq!(cfg.split.seed, plan.split);
        assert_eq!(cfg.pretrain_seed, plan.pretrain);
        assert_eq!(cfg.hyperparams.seed, plan.expansion);
        // Resolving twice changes nothing.
        assert_eq!(cfg.clone().resolved(None, None), cfg);
    }

    #[test]
    fn default_layout() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.num_sources().unwrap(), 3);
        assert_eq!(
            cfg.source_train_paths().unwrap()[2],
            PathBuf::from("out/data/source2_train.csv")
        );
        assert_eq!(
            cfg.updated_model_paths().unwrap()[0],
            PathBuf::from("out/models/updated_0.json")
        );
    }

    #[test]
    fn single_source_is_a_config_error() {
        let mut cfg = RunConfig::default();
        cfg.synthetic.as_mut().unwrap().sources.truncate(1);
        assert!(matches!(cfg.num_sources(), Err(CliError::Config(_))));
    }

    #[test]
    fn listed_paths_must_match_source_count() {
        let mut cfg = RunConfig::default();
        cfg.paths.original_models = vec!["a.json".into(), "b.json".into()];
        cfg.paths.updated_models = vec!["u.json".into()];
        assert_eq!(cfg.num_sources().unwrap(), 2);
        assert!(cfg.updated_model_paths().is_err());
    }
}
