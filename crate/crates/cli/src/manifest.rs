//! Per-command manifests: the resolved config plus digests of every file read
//! and written.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_at, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(io_at(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Paths inside the output directory are recorded relative to it.
fn display_path(path: &Path, out_dir: &Path) -> String {
    path.strip_prefix(out_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

/// Collects artifacts while a command runs.
#[derive(Debug)]
pub struct Recorder {
    command: String,
    config: RunConfig,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
}

impl Recorder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_owned(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn artifact(&self, path: &Path) -> CliResult<Artifact> {
        Ok(Artifact {
            path: display_path(path, &self.config.paths.out_dir),
            sha256: sha256_file(path)?,
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let a = self.artifact(path)?;
        self.inputs.push(a);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        let a = self.artifact(path)?;
        self.outputs.push(a);
        Ok(())
    }

    /// Writes `manifests/<command>.json` and returns its path.
    pub fn finish(self) -> CliResult<PathBuf> {
        let dir = self.config.manifests_dir();
        std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let path = dir.join(format!("{}.json", self.command));
        let manifest = Manifest {
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    std::fs::write(path, text).map_err(io_at(path))
}

pub fn load_manifest(path: &Path) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Verifies that an `expand` manifest read no source-domain data: its inputs
/// may only be the original model files and the new-domain training CSV.
pub fn audit_source_free(manifest: &Manifest) -> Result<(), String> {
    let cfg = &manifest.config;
    let out = &cfg.paths.out_dir;
    let shown = |p: &Path| display_path(p, out);
    let mut forbidden: Vec<String> = Vec::new();
    for paths in [cfg.source_train_paths(), cfg.source_test_paths()] {
        forbidden.extend(paths.map_err(|e| e.to_string())?.iter().map(|p| shown(p)));
    }
    forbidden.push(shown(&cfg.new_test_path()));
    let mut allowed: Vec<String> = cfg
        .original_model_paths()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|p| shown(p))
        .collect();
    allowed.push(shown(&cfg.new_train_path()));

    for input in &manifest.inputs {
        if forbidden.contains(&input.path) {
            return Err(format!(
                "{} read source or test data {}",
                manifest.command, input.path
            ));
        }
        if !allowed.contains(&input.path) {
            return Err(format!(
                "{} read unexpected input {}",
                manifest.command, input.path
            ));
        }
    }
    Ok(())
}
