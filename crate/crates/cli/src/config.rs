//! Run configuration file.
//!
//! ```toml
//! dataset = "ED"
//! min_freq = 1
//!
//! [paths]
//! corpus = "data/mapped.jsonl"
//! embeddings = "none"            # or a GloVe text file
//! checkpoints = "runs/checkpoints"
//! reports = "runs/reports"
//!
//! [model]     # ModelConfig fields
//! [train]     # TrainConfig fields
//! [decoding]  # width, length_penalty, max_new_tokens
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! `vocab_size`, `n_emotions` and `n_sentiments` are taken from the data.

use std::fs;
use std::path::{Path, PathBuf};

use asem::corpus::DatasetTag;
use asem::decoding::BeamConfig;
use asem::model::ModelConfig;
use asem::training::TrainConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_dataset")]
    pub dataset: DatasetTag,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decoding: BeamConfig,
}

fn default_dataset() -> DatasetTag {
    DatasetTag::Ed
}

fn default_min_freq() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    #[serde(default = "none_path")]
    pub embeddings: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

fn none_path() -> PathBuf {
    PathBuf::from("none")
}

impl Paths {
    pub fn embeddings(&self) -> Option<&Path> {
        (self.embeddings.as_os_str() != "none").then_some(self.embeddings.as_path())
    }
}

impl RunConfig {
    /// Parses and validates `path`, applying a seed override.
    pub fn load(path: &Path, seed: Option<u64>) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.paths.corpus);
        resolve(&mut cfg.paths.checkpoints);
        resolve(&mut cfg.paths.reports);
        if cfg.paths.embeddings().is_some() {
            resolve(&mut cfg.paths.embeddings);
        }
        if let Some(seed) = seed {
            cfg.train.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        require_file(&self.paths.corpus, "corpus")?;
        if let Some(p) = self.paths.embeddings() {
            require_file(p, "embeddings")?;
        }
        if self.min_freq == 0 {
            return Err(CliError::Config("min_freq must be at least 1".into()));
        }
        if self.decoding.width == 0 {
            return Err(CliError::Config("decoding.width must be at least 1".into()));
        }
        self.train.validate()?;
        Ok(())
    }
}

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} file {} does not exist", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        fs::write(dir.join("corpus.jsonl"), "").unwrap();
        let p = dir.join("run.toml");
        fs::write(&p, body).unwrap();
        p
    }

    const BASE: &str = "[paths]\ncorpus = \"corpus.jsonl\"\ncheckpoints = \"ck\"\nreports = \"rep\"\n";

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::load(&write(dir.path(), BASE), Some(9)).unwrap();
        assert_eq!(cfg.dataset, DatasetTag::Ed);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.paths.checkpoints, dir.path().join("ck"));
        assert!(cfg.paths.embeddings().is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for extra in ["colour = 1\n", "[model]\nwidth = 3\n", "[train]\nlr = 0.1\n"] {
            let body = format!("{extra}{BASE}");
            let body = if extra.starts_with('[') { format!("{BASE}{extra}") } else { body };
            assert!(RunConfig::load(&write(dir.path(), &body), None).is_err(), "{extra}");
        }
    }

    #[test]
    fn missing_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), &BASE.replace("[paths]\n", "[paths]\nembeddings = \"glove.txt\"\n"));
        assert!(matches!(RunConfig::load(&p, None), Err(CliError::Config(_))));
    }
}
