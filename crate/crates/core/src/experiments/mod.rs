//! Experiment harness: equivalence and robustness curves over a perturbation
//! grid, σ² and model-accuracy sweeps, the convergence-rate study and the
//! Lipschitz check on the expected explanation.
//!
//! Seeds are derived per unit of work, never drawn from a shared stream:
//!
//! | draw                                   | seed                                          |
//! |----------------------------------------|-----------------------------------------------|
//! | explanation of point `i` (slot 0) or of its neighbor `m` (slot `m + 1`) at count `n`, repetition `r` | `derive_seed(base, [lane, i, n, r, slot])`, lane 1 = SmoothGrad, 2 = C-LIME |
//! | neighbor offsets of point `i`          | `derive_seed(base, [3, i, r])`                |
//! | oracle at point `i`                    | `derive_seed(base, [4, i, r])`                |
//! | Lipschitz pair `k` (offset, samples)   | `derive_seed(base, [5, k, 0])`, `[5, k, 1]`   |
//!
//! σ² is not part of any seed, so a sweep over a single σ² reproduces
//! [`run_equivalence`] exactly, and results do not depend on the number of
//! worker threads.

mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::Dataset;
use crate::explainers::{
    clime_with_samples, covariance_terms_mean_stderr, expected_explanation_mc, model_outputs,
    smoothgrad_with_samples, ExplainError, Method,
};
use crate::linalg::{self, Matrix, Norm};
use crate::model::{estimate_grad_max, train, GradientModel, ModelError, TrainConfig};
use crate::sampling::{derive_seed, gaussian_perturbations, NormalStream, PerturbationConfig};

pub use report::{git_describe, read_curve_csv, write_report, Curve, Manifest, ReportError};

const SMOOTHGRAD_LANE: u64 = 1;
const CLIME_LANE: u64 = 2;
const NEIGHBOR_LANE: u64 = 3;
const ORACLE_LANE: u64 = 4;
const LIPSCHITZ_LANE: u64 = 5;

/// Perturbation rows per Lipschitz pair used as gradient-norm probes.
const GRAD_PROBES_PER_PAIR: usize = 2000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("test point {point}, n = {n}: {error}")]
    Explain { point: usize, n: usize, error: ExplainError },
    #[error("dataset has no test points")]
    NoTestPoints,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// One point of a curve: the mean over test points (and repetitions) of a
/// distance, with the standard error of that mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub perturbation_count: usize,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Perturbation variance for equivalence, robustness and convergence.
    pub sigma2: f64,
    pub n_grid: Vec<usize>,
    /// Variance of the neighbor offsets in the robustness experiment.
    pub neighbor_sigma2: f64,
    pub neighbors_per_point: usize,
    /// The first this-many rows of the test split are explained.
    pub test_subset_size: usize,
    pub base_seed: u64,
    pub norm: Norm,
    pub epochs_list: Vec<usize>,
    pub sigma2_list: Vec<f64>,
    pub repetitions: usize,
    /// Sample count of the reference explanation in the convergence study.
    pub oracle_samples: usize,
    pub lipschitz_pairs: usize,
    pub lipschitz_samples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sigma2: 1.0,
            n_grid: vec![100, 200, 500, 1000, 2000, 5000, 10_000],
            neighbor_sigma2: 0.01,
            neighbors_per_point: 10,
            test_subset_size: 50,
            base_seed: 0,
            norm: Norm::L1,
            epochs_list: vec![1, 15],
            sigma2_list: vec![0.01, 0.1, 1.0],
            repetitions: 1,
            oracle_samples: 1_000_000,
            lipschitz_pairs: 100,
            lipschitz_samples: 200_000,
        }
    }
}

fn positive_variance(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ExperimentError::Config(format!("{name} must be finite and positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ExperimentError::Config(msg.to_string()));
        positive_variance("sigma2", self.sigma2)?;
        positive_variance("neighbor_sigma2", self.neighbor_sigma2)?;
        for &s in &self.sigma2_list {
            positive_variance("sigma2_list entry", s)?;
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return bad("n_grid must be nonempty with positive counts");
        }
        if self.sigma2_list.is_empty() {
            return bad("sigma2_list must be nonempty");
        }
        if self.epochs_list.is_empty() || self.epochs_list.contains(&0) {
            return bad("epochs_list must be nonempty with positive epoch counts");
        }
        if self.neighbors_per_point == 0 {
            return bad("neighbors_per_point must be at least 1");
        }
        if self.test_subset_size == 0 {
            return bad("test_subset_size must be at least 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.oracle_samples < 2 || self.lipschitz_samples < 2 {
            return bad("oracle_samples and lipschitz_samples must be at least 2");
        }
        if self.lipschitz_pairs == 0 {
            return bad("lipschitz_pairs must be at least 1");
        }
        Ok(())
    }
}

/// The points explained by every experiment: the leading rows of the test split.
pub fn test_points(data: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let rows = data.test_rows();
    if rows.is_empty() {
        return Err(ExperimentError::NoTestPoints);
    }
    Ok(rows
        .iter()
        .take(cfg.test_subset_size)
        .map(|&i| data.features().row(i).to_vec())
        .collect())
}

fn lane(method: Method) -> Result<u64> {
    match method {
        Method::Smoothgrad => Ok(SMOOTHGRAD_LANE),
        Method::Clime => Ok(CLIME_LANE),
        other => Err(ExperimentError::Config(format!(
            "experiments compare smoothgrad and clime, not {other}"
        ))),
    }
}

/// Seed of the explanation of point `point` (slot 0) or its neighbor
/// `slot − 1` at perturbation count `n` in repetition `rep`.
pub fn explanation_seed(base: u64, method: Method, point: usize, n: usize, rep: usize, slot: usize) -> u64 {
    let lane = lane(method).unwrap_or(0);
    derive_seed(base, &[lane, point as u64, n as u64, rep as u64, slot as u64])
}

struct Ctx<'a, M: ?Sized> {
    model: &'a M,
    cfg: &'a ExperimentConfig,
    sigma2: f64,
    rep: usize,
}

impl<M: GradientModel + ?Sized> Ctx<'_, M> {
    fn explain(&self, method: Method, x: &[f64], point: usize, n: usize, slot: usize) -> Result<Vec<f64>> {
        let seed = explanation_seed(self.cfg.base_seed, method, point, n, self.rep, slot);
        let wrap = |error| ExperimentError::Explain { point, n, error };
        let pc = PerturbationConfig::new(x.to_vec(), self.sigma2, n, seed).map_err(|e| wrap(e.into()))?;
        let samples = gaussian_perturbations(&pc);
        match method {
            Method::Smoothgrad => smoothgrad_with_samples(self.model, &samples),
            _ => clime_with_samples(self.model, &samples),
        }
        .map_err(wrap)
    }

    fn distance(&self, a: &[f64], b: &[f64], norm: Norm) -> f64 {
        linalg::distance(a, b, norm).expect("explanations share the model dimension")
    }

    /// Per point, per grid entry: distance between SmoothGrad and C-LIME.
    fn equivalence(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                self.cfg
                    .n_grid
                    .iter()
                    .map(|&n| {
                        let sg = self.explain(Method::Smoothgrad, x, i, n, 0)?;
                        let cl = self.explain(Method::Clime, x, i, n, 0)?;
                        Ok(self.distance(&sg, &cl, self.cfg.norm))
                    })
                    .collect()
            })
            .collect()
    }

    fn neighbors(&self, x: &[f64], point: usize) -> Vec<Vec<f64>> {
        let seed = derive_seed(self.cfg.base_seed, &[NEIGHBOR_LANE, point as u64, self.rep as u64]);
        let mut stream = NormalStream::new(seed);
        let scale = self.cfg.neighbor_sigma2.sqrt();
        (0..self.cfg.neighbors_per_point)
            .map(|_| x.iter().map(|&v| v + scale * stream.next_normal()).collect())
            .collect()
    }

    /// Per point, per grid entry: largest distance between the explanation
    /// at the point and at any of its neighbors.
    fn robustness(&self, method: Method, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        lane(method)?;
        points
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let neighbors = self.neighbors(x, i);
                self.cfg
                    .n_grid
                    .iter()
                    .map(|&n| {
                        let at_x = self.explain(method, x, i, n, 0)?;
                        let mut worst = 0.0_f64;
                        for (m, xn) in neighbors.iter().enumerate() {
                            let e = self.explain(method, xn, i, n, m + 1)?;
                            worst = worst.max(self.distance(&at_x, &e, self.cfg.norm));
                        }
                        Ok(worst)
                    })
                    .collect()
            })
            .collect()
    }

    /// Per point, per grid entry: L2 distance of SmoothGrad and C-LIME to
    /// the oracle at the same point.
    fn convergence(&self, points: &[Vec<f64>]) -> Result<Vec<[Vec<f64>; 2]>> {
        points
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let seed = derive_seed(self.cfg.base_seed, &[ORACLE_LANE, i as u64, self.rep as u64]);
                let oracle = expected_explanation_mc(self.model, x, self.sigma2, self.cfg.oracle_samples, seed)
                    .map_err(|error| ExperimentError::Explain {
                        point: i,
                        n: self.cfg.oracle_samples,
                        error,
                    })?
                    .weights;
                let mut sg = Vec::with_capacity(self.cfg.n_grid.len());
                let mut cl = Vec::with_capacity(self.cfg.n_grid.len());
                for &n in &self.cfg.n_grid {
                    sg.push(self.distance(&self.explain(Method::Smoothgrad, x, i, n, 0)?, &oracle, Norm::L2));
                    cl.push(self.distance(&self.explain(Method::Clime, x, i, n, 0)?, &oracle, Norm::L2));
                }
                Ok([sg, cl])
            })
            .collect()
    }
}

fn summarize(n: usize, values: &[f64]) -> CurvePoint {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    } else {
        0.0
    };
    CurvePoint {
        perturbation_count: n,
        value: mean,
        stderr,
    }
}

/// Pools per-point rows from every repetition into one curve.
fn pool(grid: &[usize], reps: &[Vec<Vec<f64>>]) -> Vec<CurvePoint> {
    grid.iter()
        .enumerate()
        .map(|(j, &n)| {
            let values: Vec<f64> = reps.iter().flatten().map(|row| row[j]).collect();
            summarize(n, &values)
        })
        .collect()
}

fn over_reps<F>(cfg: &ExperimentConfig, mut one: F) -> Result<Vec<CurvePoint>>
where
    F: FnMut(usize) -> Result<Vec<Vec<f64>>>,
{
    let reps = (0..cfg.repetitions).map(&mut one).collect::<Result<Vec<_>>>()?;
    Ok(pool(&cfg.n_grid, &reps))
}

fn ctx<'a, M: ?Sized>(model: &'a M, cfg: &'a ExperimentConfig, rep: usize) -> Ctx<'a, M> {
    Ctx {
        model,
        cfg,
        sigma2: cfg.sigma2,
        rep,
    }
}

/// Mean distance between SmoothGrad and C-LIME per grid entry, pooled over
/// `cfg.repetitions`.
pub fn run_equivalence<M: GradientModel + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let points = test_points(data, cfg)?;
    over_reps(cfg, |rep| ctx(model, cfg, rep).equivalence(&points))
}

/// [`run_equivalence`] restricted to a single repetition.
pub fn run_equivalence_rep<M: GradientModel + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &ExperimentConfig,
    rep: usize,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let points = test_points(data, cfg)?;
    Ok(pool(&cfg.n_grid, &[ctx(model, cfg, rep).equivalence(&points)?]))
}

/// Mean over test points of the largest distance between the explanation at
/// a point and at its neighbors `x′ ~ N(x, neighbor_sigma2·I)`. SmoothGrad
/// and C-LIME see the same neighbors.
pub fn run_robustness<M: GradientModel + ?Sized>(
    method: Method,
    model: &M,
    data: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let points = test_points(data, cfg)?;
    over_reps(cfg, |rep| ctx(model, cfg, rep).robustness(method, &points))
}

pub fn run_robustness_rep<M: GradientModel + ?Sized>(
    method: Method,
    model: &M,
    data: &Dataset,
    cfg: &ExperimentConfig,
    rep: usize,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let points = test_points(data, cfg)?;
    Ok(pool(&cfg.n_grid, &[ctx(model, cfg, rep).robustness(method, &points)?]))
}

/// Equivalence and robustness curves for one setting of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub equivalence: Vec<CurvePoint>,
    pub robustness_smoothgrad: Vec<CurvePoint>,
    pub robustness_clime: Vec<CurvePoint>,
}

fn all_curves<M: GradientModel + ?Sized>(model: &M, data: &Dataset, cfg: &ExperimentConfig) -> Result<Curves> {
    Ok(Curves {
        equivalence: run_equivalence(model, data, cfg)?,
        robustness_smoothgrad: run_robustness(Method::Smoothgrad, model, data, cfg)?,
        robustness_clime: run_robustness(Method::Clime, model, data, cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweepEntry {
    pub sigma2: f64,
    #[serde(flatten)]
    pub curves: Curves,
}

/// Equivalence and robustness curves for every σ² in `cfg.sigma2_list`.
pub fn run_sigma_sweep<M: GradientModel + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<Vec<SigmaSweepEntry>> {
    cfg.validate()?;
    cfg.sigma2_list
        .iter()
        .map(|&sigma2| {
            let cfg = ExperimentConfig {
                sigma2,
                ..cfg.clone()
            };
            Ok(SigmaSweepEntry {
                sigma2,
                curves: all_curves(model, data, &cfg)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySweepEntry {
    pub epochs: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    #[serde(flatten)]
    pub curves: Curves,
}

/// Trains one model per entry of `cfg.epochs_list` (all from the same
/// initialization seed) and computes its curves.
pub fn run_accuracy_sweep(
    data: &Dataset,
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AccuracySweepEntry>> {
    cfg.validate()?;
    cfg.epochs_list
        .iter()
        .map(|&epochs| {
            let tc = TrainConfig {
                epochs,
                ..train_cfg.clone()
            };
            let (model, metrics) = train(data, &tc)?;
            Ok(AccuracySweepEntry {
                epochs,
                train_acc: metrics.train_acc,
                test_acc: metrics.test_acc,
                curves: all_curves(&model, data, cfg)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub n_grid: Vec<usize>,
    pub oracle_samples: usize,
    /// Mean L2 distance to the oracle per grid entry.
    pub smoothgrad: Vec<CurvePoint>,
    pub clime: Vec<CurvePoint>,
    /// Least-squares slope of log error against log n; `None` with fewer
    /// than two distinct counts or a zero error.
    pub smoothgrad_slope: Option<f64>,
    pub clime_slope: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[CurvePoint]) -> Option<f64> {
    if points.iter().any(|p| !(p.value > 0.0) || p.perturbation_count == 0) {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.perturbation_count as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.value.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Distance of SmoothGrad and C-LIME to a `cfg.oracle_samples`-sample
/// estimate of the expected explanation, in L2 regardless of `cfg.norm`.
pub fn run_convergence<M: GradientModel + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let points = test_points(data, cfg)?;
    let mut sg = Vec::with_capacity(cfg.repetitions);
    let mut cl = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let (a, b): (Vec<_>, Vec<_>) = ctx(model, cfg, rep)
            .convergence(&points)?
            .into_iter()
            .map(|[a, b]| (a, b))
            .unzip();
        sg.push(a);
        cl.push(b);
    }
    let smoothgrad = pool(&cfg.n_grid, &sg);
    let clime = pool(&cfg.n_grid, &cl);
    Ok(ConvergenceReport {
        n_grid: cfg.n_grid.clone(),
        oracle_samples: cfg.oracle_samples,
        smoothgrad_slope: log_log_slope(&smoothgrad),
        clime_slope: log_log_slope(&clime),
        smoothgrad,
        clime,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzPair {
    pub point: usize,
    pub offset_norm: f64,
    /// `‖E(x′) − E(x)‖₂ / ‖x′ − x‖₂` for the oracle explanation `E`.
    pub quotient: f64,
    /// Monte-Carlo standard error of the numerator, divided by `‖x′ − x‖₂`.
    pub noise_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub sigma2: f64,
    pub samples: usize,
    pub grad_max: f64,
    /// `grad_max / (2σ)`.
    pub bound: f64,
    pub pairs: Vec<LipschitzPair>,
}

impl LipschitzReport {
    /// Pairs whose quotient exceeds `bound + k · noise_floor`.
    pub fn violations(&self, k: f64) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.quotient > self.bound + k * p.noise_floor)
            .count()
    }

    pub fn max_quotient(&self) -> f64 {
        self.pairs.iter().fold(0.0, |m, p| m.max(p.quotient))
    }
}

/// Compares the oracle explanation at test points `x` and nearby points
/// `x′ = x + δ`, `δ ~ N(0, neighbor_sigma2·I)`, against `grad_max / (2σ)`.
///
/// Both oracles use the same standard-normal draws `z` (`a = x + σz`,
/// `a′ = x′ + σz`), so their difference is the covariance of the centered
/// samples with `f(a′) − f(a)`, whose standard error gives the noise floor.
/// `grad_max` is the largest gradient norm seen at the test points, the
/// shifted points and a subsample of every pair's perturbations.
pub fn run_lipschitz<M: GradientModel + ?Sized>(
    model: &M,
    data: &Dataset,
    cfg: &ExperimentConfig,
    sigma2: f64,
) -> Result<LipschitzReport> {
    cfg.validate()?;
    positive_variance("sigma2", sigma2)?;
    let points = test_points(data, cfg)?;
    let d = points[0].len();
    let sigma = sigma2.sqrt();
    let n = cfg.lipschitz_samples;
    let probe_rows = n.min(GRAD_PROBES_PER_PAIR);

    let per_pair: Vec<(LipschitzPair, Vec<f64>)> = (0..cfg.lipschitz_pairs)
        .into_par_iter()
        .map(|k| {
            let i = k % points.len();
            let x = &points[i];
            let mut offsets = NormalStream::new(derive_seed(cfg.base_seed, &[LIPSCHITZ_LANE, k as u64, 0]));
            let delta: Vec<f64> = (0..d).map(|_| cfg.neighbor_sigma2.sqrt() * offsets.next_normal()).collect();
            let shifted: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();

            let mut z = Matrix::zeros(n, d);
            NormalStream::new(derive_seed(cfg.base_seed, &[LIPSCHITZ_LANE, k as u64, 1])).fill(z.as_mut_slice());
            let mut a = z.clone();
            for row in 0..n {
                for (v, &c) in a.row_mut(row).iter_mut().zip(x) {
                    *v = c + sigma * *v;
                }
            }
            let mut a_shift = a.clone();
            for row in 0..n {
                for (v, &dl) in a_shift.row_mut(row).iter_mut().zip(&delta) {
                    *v += dl;
                }
            }
            let diff: Vec<f64> = model_outputs(model, &a_shift)
                .iter()
                .zip(model_outputs(model, &a))
                .map(|(p, q)| p - q)
                .collect();
            let (change, stderr) = covariance_terms_mean_stderr(&a, &diff, sigma2);
            let offset_norm = linalg::norm(&delta, Norm::L2);

            let mut probes = Vec::with_capacity((probe_rows + 1) * d);
            probes.extend_from_slice(&shifted);
            probes.extend_from_slice(&a.as_slice()[..probe_rows * d]);
            let pair = LipschitzPair {
                point: i,
                offset_norm,
                quotient: linalg::norm(&change, Norm::L2) / offset_norm,
                noise_floor: linalg::norm(&stderr, Norm::L2) / offset_norm,
            };
            (pair, probes)
        })
        .collect();

    let mut probes: Vec<f64> = points.iter().flatten().copied().collect();
    for (_, p) in &per_pair {
        probes.extend_from_slice(p);
    }
    let probes = Matrix::from_vec(probes.len() / d, d, probes).map_err(ModelError::Linalg)?;
    let estimate = estimate_grad_max(model, &probes)?;
    Ok(LipschitzReport {
        sigma2,
        samples: n,
        grad_max: estimate.grad_max,
        bound: estimate.bound(sigma2),
        pairs: per_pair.into_iter().map(|(p, _)| p).collect(),
    })
}

/// The experiments that produce curves, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Equivalence,
    Robustness,
    SigmaSweep,
    AccuracySweep,
    Convergence,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Equivalence,
        ExperimentKind::Robustness,
        ExperimentKind::SigmaSweep,
        ExperimentKind::AccuracySweep,
        ExperimentKind::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Equivalence => "equivalence",
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::SigmaSweep => "sigma-sweep",
            ExperimentKind::AccuracySweep => "accuracy-sweep",
            ExperimentKind::Convergence => "convergence",
        }
    }

    /// Whether the experiment explains a given model (the accuracy sweep
    /// trains its own).
    pub fn needs_model(self) -> bool {
        self != ExperimentKind::AccuracySweep
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            format!("unknown experiment kind {s:?}; valid kinds: {}", valid.join(", "))
        })
    }
}

/// Curves of one experiment run plus its scalar results.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub curves: Vec<Curve>,
    pub summary: serde_json::Value,
}

fn push_curves(out: &mut Vec<Curve>, prefix: &str, curves: Curves) {
    out.push(Curve::new(format!("{prefix}equivalence"), curves.equivalence));
    out.push(Curve::new(format!("{prefix}robustness_smoothgrad"), curves.robustness_smoothgrad));
    out.push(Curve::new(format!("{prefix}robustness_clime"), curves.robustness_clime));
}

/// Runs `kind` and names its curves for [`write_report`]. The accuracy sweep
/// trains its own models with `train_cfg` and ignores `model`; every other
/// kind requires one.
pub fn run_experiment<M: GradientModel + ?Sized>(
    kind: ExperimentKind,
    model: Option<&M>,
    data: &Dataset,
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
) -> Result<Outcome> {
    let mut curves = Vec::new();
    let model = || model.ok_or_else(|| ExperimentError::Config(format!("{kind} needs a model")));
    let summary = match kind {
        ExperimentKind::Equivalence => {
            curves.push(Curve::new("equivalence", run_equivalence(model()?, data, cfg)?));
            serde_json::Value::Null
        }
        ExperimentKind::Robustness => {
            for method in [Method::Smoothgrad, Method::Clime] {
                let points = run_robustness(method, model()?, data, cfg)?;
                curves.push(Curve::new(format!("robustness_{method}"), points));
            }
            serde_json::Value::Null
        }
        ExperimentKind::SigmaSweep => {
            for entry in run_sigma_sweep(model()?, data, cfg)? {
                push_curves(&mut curves, &format!("sigma2_{}_", entry.sigma2), entry.curves);
            }
            serde_json::json!({ "sigma2_list": cfg.sigma2_list })
        }
        ExperimentKind::AccuracySweep => {
            let mut models = Vec::new();
            for entry in run_accuracy_sweep(data, cfg, train_cfg)? {
                models.push(serde_json::json!({
                    "epochs": entry.epochs,
                    "train_acc": entry.train_acc,
                    "test_acc": entry.test_acc,
                }));
                push_curves(&mut curves, &format!("epochs_{}_", entry.epochs), entry.curves);
            }
            serde_json::json!({ "models": models })
        }
        ExperimentKind::Convergence => {
            let report = run_convergence(model()?, data, cfg)?;
            curves.push(Curve::new("convergence_smoothgrad", report.smoothgrad));
            curves.push(Curve::new("convergence_clime", report.clime));
            serde_json::json!({
                "oracle_samples": report.oracle_samples,
                "smoothgrad_slope": report.smoothgrad_slope,
                "clime_slope": report.clime_slope,
            })
        }
    };
    Ok(Outcome { curves, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_simulated, split_dataset};
    use crate::model::{ConstantModel, LinearModel, QuadraticModel};

    fn data() -> Dataset {
        split_dataset(&generate_simulated(200, 5), 0.8, 5).unwrap()
    }

    fn small(grid: Vec<usize>) -> ExperimentConfig {
        ExperimentConfig {
            n_grid: grid,
            test_subset_size: 6,
            neighbors_per_point: 4,
            oracle_samples: 20_000,
            lipschitz_pairs: 6,
            lipschitz_samples: 5_000,
            base_seed: 11,
            ..ExperimentConfig::default()
        }
    }

    fn trained() -> crate::model::Mlp {
        train(&data(), &TrainConfig::default()).unwrap().0
    }

    #[test]
    fn linear_model_is_exactly_equivalent() {
        let f = LinearModel::new(vec![0.7, -1.3], 0.2);
        let curve = run_equivalence(&f, &data(), &small(vec![3, 10, 100])).unwrap();
        assert_eq!(curve.len(), 3);
        for p in &curve {
            assert!(p.value <= 1e-9, "{p:?}");
        }
    }

    #[test]
    fn constant_model_is_perfectly_robust() {
        let f = ConstantModel { dim: 2, value: 0.4 };
        let cfg = small(vec![5, 50]);
        for p in run_robustness(Method::Smoothgrad, &f, &data(), &cfg).unwrap() {
            assert_eq!(p.value, 0.0);
        }
        for p in run_robustness(Method::Clime, &f, &data(), &cfg).unwrap() {
            assert!(p.value <= 1e-9);
        }
    }

    #[test]
    fn robustness_rejects_other_methods() {
        let f = ConstantModel { dim: 2, value: 0.4 };
        let err = run_robustness(Method::Oracle, &f, &data(), &small(vec![5])).unwrap_err();
        assert!(matches!(err, ExperimentError::Config(_)));
    }

    #[test]
    fn rank_deficiency_names_point_and_count() {
        let f = LinearModel::new(vec![1.0, 1.0], 0.0);
        let err = run_equivalence(&f, &data(), &small(vec![2])).unwrap_err();
        match err {
            ExperimentError::Explain { point, n, error } => {
                assert_eq!((point, n), (0, 2));
                assert!(matches!(error, ExplainError::RankDeficient { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn equivalence_shrinks_with_more_perturbations() {
        let model = trained();
        let curve = run_equivalence(&model, &data(), &small(vec![100, 3000])).unwrap();
        assert!(curve[1].value < curve[0].value, "{curve:?}");
        assert!(curve.iter().all(|p| p.stderr > 0.0));
    }

    #[test]
    fn single_sigma_sweep_matches_equivalence() {
        let model = trained();
        let cfg = ExperimentConfig {
            sigma2_list: vec![0.5],
            sigma2: 0.5,
            ..small(vec![50, 200])
        };
        let sweep = run_sigma_sweep(&model, &data(), &cfg).unwrap();
        assert_eq!(sweep.len(), 1);
        assert_eq!(sweep[0].curves.equivalence, run_equivalence(&model, &data(), &cfg).unwrap());
    }

    #[test]
    fn repetitions_pool_the_single_runs() {
        let model = trained();
        let cfg = ExperimentConfig {
            repetitions: 2,
            ..small(vec![50])
        };
        let pooled = run_equivalence(&model, &data(), &cfg).unwrap();
        let r0 = run_equivalence_rep(&model, &data(), &cfg, 0).unwrap();
        let r1 = run_equivalence_rep(&model, &data(), &cfg, 1).unwrap();
        assert_ne!(r0, r1);
        let mean = (r0[0].value + r1[0].value) / 2.0;
        assert!((pooled[0].value - mean).abs() < 1e-12);
        let single = ExperimentConfig {
            repetitions: 1,
            ..cfg
        };
        assert_eq!(run_equivalence(&model, &data(), &single).unwrap(), r0);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let model = trained();
        let cfg = small(vec![20, 200]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_robustness(Method::Clime, &model, &data(), &cfg).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn accuracy_sweep_orders_models() {
        let data = split_dataset(&generate_simulated(1000, 5), 0.8, 5).unwrap();
        let cfg = ExperimentConfig {
            epochs_list: vec![1, 15],
            ..small(vec![100])
        };
        let sweep = run_accuracy_sweep(&data, &cfg, &TrainConfig::default()).unwrap();
        assert_eq!(sweep.len(), 2);
        assert!(sweep[0].test_acc < sweep[1].test_acc, "{} vs {}", sweep[0].test_acc, sweep[1].test_acc);
    }

    #[test]
    fn convergence_on_linear_model_is_oracle_noise() {
        let f = LinearModel::new(vec![0.5, -0.25], 0.0);
        let report = run_convergence(&f, &data(), &small(vec![10, 1000])).unwrap();
        // Both methods are exact, so only the oracle's own error remains; it
        // scales like ‖θ‖·sqrt(d)/sqrt(N).
        let floor = 4.0 * 0.56 * 2.0_f64.sqrt() / (20_000.0_f64).sqrt();
        for p in report.smoothgrad.iter().chain(&report.clime) {
            assert!(p.value < floor, "{p:?}");
        }
        let sg: Vec<f64> = report.smoothgrad.iter().map(|p| p.value).collect();
        assert!((sg[0] - sg[1]).abs() < 1e-12);
    }

    #[test]
    fn convergence_slope_on_one_dimensional_quadratic() {
        // f = x², where SmoothGrad has per-sample variance 4σ² and the slope
        // of its error is -1/2 up to the oracle's noise.
        let f = QuadraticModel::square_of(1, 0);
        let data = Dataset::new(
            Matrix::from_rows(&[vec![1.0], vec![-0.5], vec![1.5], vec![0.3]]).unwrap(),
            vec![0, 1, 0, 1],
            vec!["x".into()],
        )
        .unwrap();
        let cfg = ExperimentConfig {
            n_grid: vec![100, 1000, 10_000],
            oracle_samples: 2_000_000,
            repetitions: 4,
            ..small(vec![1])
        };
        let report = run_convergence(&f, &data, &cfg).unwrap();
        let slope = report.smoothgrad_slope.unwrap();
        assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
        let slope = report.clime_slope.unwrap();
        assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<CurvePoint> = [10usize, 100, 1000]
            .iter()
            .map(|&n| CurvePoint {
                perturbation_count: n,
                value: 3.0 / (n as f64).sqrt(),
                stderr: 0.0,
            })
            .collect();
        assert!((log_log_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&pts[..1]), None);
    }

    #[test]
    fn lipschitz_on_linear_model_is_flat() {
        let f = LinearModel::new(vec![2.0, -1.0], 0.0);
        let report = run_lipschitz(&f, &data(), &small(vec![1]), 1.0).unwrap();
        assert_eq!(report.pairs.len(), 6);
        assert!((report.grad_max - 5.0_f64.sqrt()).abs() < 1e-12);
        // A shift changes a linear function by a constant, which has zero
        // covariance with the samples.
        assert!(report.max_quotient() < 1e-9);
        assert_eq!(report.violations(0.0), 0);
    }

    #[test]
    fn lipschitz_on_trained_model_respects_bound() {
        let model = trained();
        let report = run_lipschitz(&model, &data(), &small(vec![1]), 1.0).unwrap();
        assert_eq!(report.violations(3.0), 0, "{report:?}");
        assert!(report.pairs.iter().all(|p| p.noise_floor > 0.0));
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.neighbor_sigma2, 0.01);
        assert_eq!(cfg.test_subset_size, 50);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sigma": 1}"#).is_err());
        for bad in [
            ExperimentConfig { n_grid: vec![], ..cfg.clone() },
            ExperimentConfig { sigma2: 0.0, ..cfg.clone() },
            ExperimentConfig { sigma2_list: vec![1.0, -1.0], ..cfg.clone() },
            ExperimentConfig { repetitions: 0, ..cfg.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn kinds_parse_and_list_alternatives() {
        for kind in ExperimentKind::ALL {
            assert_eq!(kind.name().parse::<ExperimentKind>().unwrap(), kind);
        }
        let err = "lipschitz".parse::<ExperimentKind>().unwrap_err();
        assert!(err.contains("sigma-sweep") && err.contains("convergence"));
    }

    #[test]
    fn experiment_curves_are_named_per_setting() {
        let f = LinearModel::new(vec![1.0, -1.0], 0.0);
        let cfg = ExperimentConfig {
            sigma2_list: vec![0.01, 1.0],
            ..small(vec![10, 20])
        };
        let out = run_experiment(ExperimentKind::SigmaSweep, Some(&f), &data(), &cfg, &TrainConfig::default()).unwrap();
        let names: Vec<&str> = out.curves.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "sigma2_0.01_equivalence",
                "sigma2_0.01_robustness_smoothgrad",
                "sigma2_0.01_robustness_clime",
                "sigma2_1_equivalence",
                "sigma2_1_robustness_smoothgrad",
                "sigma2_1_robustness_clime",
            ]
        );
        assert!(out.curves.iter().all(|c| c.points.len() == 2));
        let missing = run_experiment(ExperimentKind::Equivalence, None::<&LinearModel>, &data(), &cfg, &TrainConfig::default());
        assert!(matches!(missing, Err(ExperimentError::Config(_))));
    }

    #[test]
    fn no_test_points_is_an_error() {
        let f = ConstantModel { dim: 2, value: 0.0 };
        let raw = generate_simulated(10, 0).with_split((0..10).collect(), vec![]).unwrap();
        assert!(matches!(
            run_equivalence(&f, &raw, &small(vec![5])),
            Err(ExperimentError::NoTestPoints)
        ));
    }
}
