//! SmoothGrad, continuous LIME (C-LIME), its ridge variant, and a Monte-Carlo
//! estimate of the explanation both methods converge to.
//!
//! Every method comes in two forms: one that draws its own perturbations from
//! a [`PerturbationConfig`], and a `*_with_samples` form that takes a shared
//! sample matrix. The exact linearity and proportionality properties only hold
//! sample-wise, so tests use the shared form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, cholesky_factor, cholesky_solve, LinalgError, Matrix, Norm};
use crate::model::{GradientModel, Model};
use crate::sampling::{gaussian_perturbations, ConfigError, PerturbationConfig};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(
        "surrogate fit is rank deficient with {n} perturbations in {d} dimensions; \
         increase n (at least d + 1) or use ridge with lambda > 0"
    )]
    RankDeficient { n: usize, d: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("ridge penalty must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Smoothgrad,
    Clime,
    ClimeRidge,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Smoothgrad => "smoothgrad",
            Method::Clime => "clime",
            Method::ClimeRidge => "clime_ridge",
            Method::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "smoothgrad" => Ok(Method::Smoothgrad),
            "clime" => Ok(Method::Clime),
            "clime_ridge" => Ok(Method::ClimeRidge),
            "oracle" => Ok(Method::Oracle),
            other => Err(format!(
                "unknown method {other:?}; expected one of smoothgrad, clime, clime_ridge, oracle"
            )),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-feature attribution together with how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub method: Method,
    pub x: Vec<f64>,
    pub sigma2: f64,
    pub n: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub weights: Vec<f64>,
}

impl AttributionVector {
    fn new(method: Method, cfg: &PerturbationConfig, weights: Vec<f64>) -> Self {
        Self {
            method,
            x: cfg.center().to_vec(),
            sigma2: cfg.variance(),
            n: cfg.count(),
            seed: cfg.seed(),
            lambda: None,
            weights,
        }
    }
}

/// Linear surrogate `g(a) = wᵀa + b` fitted by (ridge) least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub residual_mse: f64,
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(ExplainError::DimensionMismatch { expected, actual })
    }
}

/// `f` evaluated on every sample row.
pub fn model_outputs<M: Model + ?Sized>(f: &M, samples: &Matrix) -> Vec<f64> {
    samples.row_iter().map(|a| f.predict(a)).collect()
}

/// Neumaier-compensated running sums.
struct CompensatedSum {
    sum: Vec<f64>,
    carry: Vec<f64>,
}

impl CompensatedSum {
    fn new(d: usize) -> Self {
        Self {
            sum: vec![0.0; d],
            carry: vec![0.0; d],
        }
    }

    fn add(&mut self, values: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(&mut self.carry).zip(values) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    fn mean(self, n: usize) -> Vec<f64> {
        self.sum
            .iter()
            .zip(&self.carry)
            .map(|(s, c)| (s + c) / n as f64)
            .collect()
    }
}

/// Mean input gradient over the sample rows.
pub fn smoothgrad_with_samples<M: GradientModel + ?Sized>(f: &M, samples: &Matrix) -> Result<Vec<f64>> {
    check_dim(f.input_dim(), samples.cols())?;
    if samples.rows() == 0 {
        return Err(ExplainError::TooFewSamples { needed: 1, got: 0 });
    }
    let d = samples.cols();
    let mut acc = CompensatedSum::new(d);
    let mut g = vec![0.0; d];
    for a in samples.row_iter() {
        f.gradient_into(a, &mut g);
        acc.add(&g);
    }
    Ok(acc.mean(samples.rows()))
}

pub fn smoothgrad<M: GradientModel + ?Sized>(f: &M, cfg: &PerturbationConfig) -> Result<AttributionVector> {
    check_dim(f.input_dim(), cfg.dim())?;
    let samples = gaussian_perturbations(cfg);
    let weights = smoothgrad_with_samples(f, &samples)?;
    Ok(AttributionVector::new(Method::Smoothgrad, cfg, weights))
}

/// Least squares with an unpenalized intercept and penalty `lambda·‖w‖²` on
/// the mean squared error. Solved on centered data: `(C + λI) w = c`, where
/// `C` is the 1/n sample covariance of the rows and `c` their covariance with
/// the labels; `b = ȳ − wᵀā`.
pub fn ridge_fit(samples: &Matrix, labels: &[f64], lambda: f64) -> Result<SurrogateFit> {
    let (n, d) = (samples.rows(), samples.cols());
    check_dim(n, labels.len())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(ExplainError::InvalidLambda(lambda));
    }
    if n == 0 {
        return Err(ExplainError::TooFewSamples { needed: 1, got: 0 });
    }
    // Centered rows span at most n − 1 dimensions.
    if lambda == 0.0 && n < d + 1 {
        return Err(ExplainError::RankDeficient { n, d });
    }

    let mean = samples.column_means();
    let label_mean = labels.iter().sum::<f64>() / n as f64;
    let mut gram = Matrix::zeros(d, d);
    let mut cross = vec![0.0; d];
    let mut centered = vec![0.0; d];
    for (a, &y) in samples.row_iter().zip(labels) {
        for ((c, &v), &m) in centered.iter_mut().zip(a).zip(&mean) {
            *c = v - m;
        }
        let dy = y - label_mean;
        for i in 0..d {
            let ci = centered[i];
            cross[i] += ci * dy;
            for j in 0..=i {
                gram[(i, j)] += ci * centered[j];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for i in 0..d {
        cross[i] *= inv_n;
        for j in 0..=i {
            let v = gram[(i, j)] * inv_n;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    gram.add_diagonal(lambda);

    let factor = cholesky_factor(&gram).map_err(|e| match e {
        LinalgError::NotSpd { .. } => ExplainError::RankDeficient { n, d },
        other => other.into(),
    })?;
    let weights = cholesky_solve(&factor, &cross)?;
    let intercept = label_mean - linalg::dot(&weights, &mean);
    let residual_mse = samples
        .row_iter()
        .zip(labels)
        .map(|(a, &y)| (y - linalg::dot(&weights, a) - intercept).powi(2))
        .sum::<f64>()
        * inv_n;
    Ok(SurrogateFit {
        weights,
        intercept,
        residual_mse,
    })
}

/// Ordinary least squares with intercept.
pub fn ols_fit(samples: &Matrix, labels: &[f64]) -> Result<SurrogateFit> {
    ridge_fit(samples, labels, 0.0)
}

pub fn clime_with_samples<M: Model + ?Sized>(f: &M, samples: &Matrix) -> Result<Vec<f64>> {
    clime_ridge_with_samples(f, samples, 0.0)
}

pub fn clime_ridge_with_samples<M: Model + ?Sized>(f: &M, samples: &Matrix, lambda: f64) -> Result<Vec<f64>> {
    check_dim(f.input_dim(), samples.cols())?;
    let labels = model_outputs(f, samples);
    Ok(ridge_fit(samples, &labels, lambda)?.weights)
}

/// C-LIME: weights of the least-squares linear fit to `f` on the
/// perturbations. The intercept is dropped.
pub fn clime<M: Model + ?Sized>(f: &M, cfg: &PerturbationConfig) -> Result<AttributionVector> {
    check_dim(f.input_dim(), cfg.dim())?;
    let samples = gaussian_perturbations(cfg);
    let weights = clime_with_samples(f, &samples)?;
    Ok(AttributionVector::new(Method::Clime, cfg, weights))
}

/// C-LIME with an L2 penalty `lambda` on the weights. `lambda = 0` is
/// [`clime`].
pub fn clime_ridge<M: Model + ?Sized>(f: &M, cfg: &PerturbationConfig, lambda: f64) -> Result<AttributionVector> {
    check_dim(f.input_dim(), cfg.dim())?;
    let samples = gaussian_perturbations(cfg);
    let weights = clime_ridge_with_samples(f, &samples, lambda)?;
    let mut out = AttributionVector::new(Method::ClimeRidge, cfg, weights);
    out.lambda = Some(lambda);
    Ok(out)
}

/// `(1/σ²)·cov(a, f(a))` over the sample rows, with the standard error of
/// each coordinate.
pub fn oracle_with_stderr<M: Model + ?Sized>(f: &M, samples: &Matrix, sigma2: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(f.input_dim(), samples.cols())?;
    let n = samples.rows();
    if n < 2 {
        return Err(ExplainError::TooFewSamples { needed: 2, got: n });
    }
    let labels = model_outputs(f, samples);
    Ok(covariance_terms_mean_stderr(samples, &labels, sigma2))
}

/// Mean and standard error of the per-sample terms
/// `(a_i − ā_i)(y − ȳ)/σ²`. The mean is exactly the 1/n covariance over σ².
pub(crate) fn covariance_terms_mean_stderr(samples: &Matrix, labels: &[f64], sigma2: f64) -> (Vec<f64>, Vec<f64>) {
    let n = samples.rows();
    let d = samples.cols();
    let mean = samples.column_means();
    let label_mean = labels.iter().sum::<f64>() / n as f64;
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for (a, &y) in samples.row_iter().zip(labels) {
        let dy = y - label_mean;
        for i in 0..d {
            let t = (a[i] - mean[i]) * dy / sigma2;
            sum[i] += t;
            sum_sq[i] += t * t;
        }
    }
    let nf = n as f64;
    let weights: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let stderr = sum_sq
        .iter()
        .zip(&weights)
        .map(|(sq, m)| ((sq / nf - m * m).max(0.0) / (nf - 1.0)).sqrt())
        .collect();
    (weights, stderr)
}

pub fn oracle_with_samples<M: Model + ?Sized>(f: &M, samples: &Matrix, sigma2: f64) -> Result<Vec<f64>> {
    Ok(oracle_with_stderr(f, samples, sigma2)?.0)
}

/// Monte-Carlo estimate of `Σ⁻¹ cov(a, f(a))` for `a ~ N(x, σ²I)`, the common
/// large-sample limit of SmoothGrad and C-LIME.
pub fn expected_explanation_mc<M: Model + ?Sized>(
    f: &M,
    x: &[f64],
    sigma2: f64,
    samples: usize,
    seed: u64,
) -> Result<AttributionVector> {
    check_dim(f.input_dim(), x.len())?;
    let cfg = PerturbationConfig::new(x.to_vec(), sigma2, samples, seed)?;
    let draws = gaussian_perturbations(&cfg);
    let weights = oracle_with_samples(f, &draws, sigma2)?;
    Ok(AttributionVector::new(Method::Oracle, &cfg, weights))
}

pub fn explanation_distance(a: &AttributionVector, b: &AttributionVector, kind: Norm) -> Result<f64> {
    check_dim(a.weights.len(), b.weights.len())?;
    Ok(linalg::distance(&a.weights, &b.weights, kind)?)
}

/// Dispatches on `method`. `lambda` is only used by [`Method::ClimeRidge`].
pub fn explain<M: GradientModel + ?Sized>(
    f: &M,
    method: Method,
    cfg: &PerturbationConfig,
    lambda: f64,
) -> Result<AttributionVector> {
    match method {
        Method::Smoothgrad => smoothgrad(f, cfg),
        Method::Clime => clime(f, cfg),
        Method::ClimeRidge => clime_ridge(f, cfg, lambda),
        Method::Oracle => expected_explanation_mc(f, cfg.center(), cfg.variance(), cfg.count(), cfg.seed()),
    }
}
