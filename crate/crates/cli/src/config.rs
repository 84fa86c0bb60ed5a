//! The JSON run configuration shared by all commands.
//!
//! Relative paths inside a config file are resolved against the directory
//! containing that file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use smoothlime::datasets::{generate_simulated, load_csv, split_and_normalize, split_dataset};
use smoothlime::experiments::ExperimentConfig;
use smoothlime::{Dataset, TrainConfig};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Simulated {
        #[serde(default = "default_simulated_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        drop: Vec<String>,
        #[serde(default = "yes")]
        normalize: bool,
    },
}

fn default_simulated_n() -> usize {
    1000
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetSource>,
    #[serde(default)]
    pub split: SplitConfig,
    /// Saved model to explain; experiments train one when absent.
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(DatasetSource::Csv { path, .. }) = &mut cfg.dataset {
            resolve(path);
        }
        if let Some(p) = &mut cfg.model {
            resolve(p);
        }
        if let Some(p) = &mut cfg.output_dir {
            resolve(p);
        }
        cfg.train.validate().context("invalid \"train\" section")?;
        cfg.experiment.validate().context("invalid \"experiment\" section")?;
        Ok(cfg)
    }

    /// The configured dataset, split (and normalized for CSV sources).
    pub fn dataset(&self) -> Result<Dataset> {
        let source = self.dataset.as_ref().context("config has no \"dataset\" section")?;
        let split = &self.split;
        match source {
            DatasetSource::Simulated { n, seed } => {
                anyhow::ensure!(*n >= 4, "simulated dataset needs at least 4 rows, got {n}");
                Ok(split_dataset(&generate_simulated(*n, *seed), split.train_fraction, split.seed)?)
            }
            DatasetSource::Csv {
                path,
                target,
                drop,
                normalize,
            } => {
                let raw = load_csv(path, target, drop).with_context(|| format!("loading {}", path.display()))?;
                if *normalize {
                    Ok(split_and_normalize(&raw, split.train_fraction, split.seed)?)
                } else {
                    Ok(split_dataset(&raw, split.train_fraction, split.seed)?)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> serde_json::Result<RunConfig> {
        serde_json::from_str(text)
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse(r#"{"dataset": {"source": "simulated"}}"#).unwrap();
        assert_eq!(cfg.dataset, Some(DatasetSource::Simulated { n: 1000, seed: 0 }));
        assert_eq!(cfg.split, SplitConfig::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.experiment, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse(r#"{"datasets": {}}"#).is_err());
        assert!(parse(r#"{"dataset": {"source": "simulated", "size": 3}}"#).is_err());
        assert!(parse(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(parse(r#"{"split": {"fraction": 0.5}}"#).is_err());
        assert!(parse(r#"{"dataset": {"source": "parquet"}}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"dataset": {"source": "csv", "path": "data.csv", "target": "y"}, "model": "m.json", "output_dir": "/abs"}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        match cfg.dataset {
            Some(DatasetSource::Csv { path, normalize, .. }) => {
                assert_eq!(path, dir.path().join("data.csv"));
                assert!(normalize);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(cfg.model, Some(dir.path().join("m.json")));
        assert_eq!(cfg.output_dir, Some(PathBuf::from("/abs")));
    }

    #[test]
    fn documented_examples_load() {
        let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples");
        let mut seen = 0;
        for entry in fs::read_dir(&docs).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
                seen += 1;
            }
        }
        assert!(seen >= 3);
    }

    #[test]
    fn invalid_sections_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"experiment": {"n_grid": []}}"#).unwrap();
        let err = format!("{:#}", RunConfig::load(&path).unwrap_err());
        assert!(err.contains("experiment") && err.contains("n_grid"), "{err}");
    }
}
