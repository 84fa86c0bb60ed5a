//! Labelled binary-classification data: the simulated two-cluster set, CSV
//! ingestion, train/test splitting and train-split normalization.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::sampling::{derive_seed, seeded_rng, NormalStream};

/// Train-split standard deviations at or below this mark a constant feature.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}, column {column:?}: cannot parse {value:?} as a number")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: target value {value:?} is not 0 or 1")]
    NonBinaryTarget { line: u64, value: String },
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("feature {0:?} is constant on the train split")]
    DegenerateFeature(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<u8>,
    feature_names: Vec<String>,
    norm_stats: Option<Vec<FeatureStats>>,
    split: Option<Split>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self, DatasetError> {
        if labels.len() != features.rows() {
            return Err(DatasetError::Invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(DatasetError::Invalid(format!(
                "{} names for {} features",
                feature_names.len(),
                features.cols()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(DatasetError::Invalid(format!("label {} at row {i}", labels[i])));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            norm_stats: None,
            split: None,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn norm_stats(&self) -> Option<&[FeatureStats]> {
        self.norm_stats.as_deref()
    }

    pub fn split(&self) -> Option<&Split> {
        self.split.as_ref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Test-split rows in split order, or every row when unsplit.
    pub fn test_rows(&self) -> Vec<usize> {
        match &self.split {
            Some(s) => s.test.clone(),
            None => (0..self.len()).collect(),
        }
    }

    /// Assigns an explicit split; the index sets must be disjoint and cover
    /// every row.
    pub fn with_split(mut self, train: Vec<usize>, test: Vec<usize>) -> Result<Self, DatasetError> {
        let mut seen = vec![false; self.len()];
        for &i in train.iter().chain(&test) {
            match seen.get_mut(i) {
                None => return Err(DatasetError::Split(format!("row {i} out of range"))),
                Some(true) => return Err(DatasetError::Split(format!("row {i} assigned twice"))),
                Some(s) => *s = true,
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(DatasetError::Split(format!("row {i} is unassigned")));
        }
        self.split = Some(Split { train, test });
        Ok(self)
    }
}

/// Two Gaussian clusters in R²: `y` uniform in {0, 1}, `x ~ N(μ_y, I₂)` with
/// `μ₀ = [−1, −1]` and `μ₁ = [1, 1]`.
pub fn generate_simulated(n: usize, seed: u64) -> Dataset {
    assert!(n >= 2, "simulated dataset needs at least 2 rows");
    let mut label_rng = seeded_rng(derive_seed(seed, &[0]));
    let mut noise = NormalStream::new(derive_seed(seed, &[1]));
    let mut features = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (label_rng.next_u64() >> 63) as u8;
        let mu = if y == 1 { 1.0 } else { -1.0 };
        for v in features.row_mut(i) {
            *v = mu + noise.next_normal();
        }
        labels.push(y);
    }
    Dataset::new(features, labels, vec!["x1".into(), "x2".into()]).expect("shapes agree")
}

/// Reads a headered CSV. `target` names the binary label column; `drop` lists
/// columns (e.g. categorical ones) to discard. Every other column must parse
/// as a real number.
pub fn load_csv(path: &Path, target: &str, drop: &[String]) -> Result<Dataset, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let target_idx = column(target)?;
    let mut dropped = vec![false; headers.len()];
    for name in drop {
        dropped[column(name)?] = true;
    }
    dropped[target_idx] = true;
    let kept: Vec<usize> = (0..headers.len()).filter(|&i| !dropped[i]).collect();
    let names: Vec<String> = kept.iter().map(|&i| headers[i].trim().to_string()).collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_target = record.get(target_idx).unwrap_or("").trim();
        let label = match raw_target.parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => {
                return Err(DatasetError::NonBinaryTarget {
                    line,
                    value: raw_target.to_string(),
                })
            }
        };
        for &i in &kept {
            let raw = record.get(i).unwrap_or("").trim();
            let value = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DatasetError::Parse {
                line,
                column: headers[i].trim().to_string(),
                value: raw.to_string(),
            })?;
            data.push(value);
        }
        labels.push(label);
    }
    let features = Matrix::from_vec(labels.len(), kept.len(), data)?;
    Dataset::new(features, labels, names)
}

fn shuffled_split(n: usize, train_fraction: f64, seed: u64) -> Result<Split, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::Split(format!("train fraction {train_fraction} not in (0, 1)")));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train < 2 || n - n_train.min(n) < 2 {
        return Err(DatasetError::Split(format!(
            "{n} rows give {n_train} train rows; each split needs at least 2"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let test = order.split_off(n_train);
    Ok(Split { train: order, test })
}

/// Shuffled train/test split without touching feature values.
pub fn split_dataset(data: &Dataset, train_fraction: f64, seed: u64) -> Result<Dataset, DatasetError> {
    let split = shuffled_split(data.len(), train_fraction, seed)?;
    data.clone().with_split(split.train, split.test)
}

/// Splits, then standardizes every feature with mean and (1/n) standard
/// deviation computed on the train split only.
pub fn split_and_normalize(data: &Dataset, train_fraction: f64, seed: u64) -> Result<Dataset, DatasetError> {
    let mut out = split_dataset(data, train_fraction, seed)?;
    let split = out.split.as_ref().expect("just assigned");
    let n_train = split.train.len() as f64;
    let d = out.dim();
    let mut stats = Vec::with_capacity(d);
    for j in 0..d {
        let mean = split.train.iter().map(|&i| out.features[(i, j)]).sum::<f64>() / n_train;
        let var = split
            .train
            .iter()
            .map(|&i| (out.features[(i, j)] - mean).powi(2))
            .sum::<f64>()
            / n_train;
        let std = var.sqrt();
        if !(std > DEGENERATE_STD) {
            return Err(DatasetError::DegenerateFeature(out.feature_names[j].clone()));
        }
        stats.push(FeatureStats { mean, std });
    }
    for i in 0..out.len() {
        for (v, s) in out.features.row_mut(i).iter_mut().zip(&stats) {
            *v = (*v - s.mean) / s.std;
        }
    }
    out.norm_stats = Some(stats);
    Ok(out)
}
