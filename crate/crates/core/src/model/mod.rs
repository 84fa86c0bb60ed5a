//! Black-box functions `f: Rᵈ → R` and their input gradients.

mod analytic;
mod io;
mod mlp;
mod train;

pub use analytic::{ConstantModel, LinearModel, QuadraticModel};
pub use io::{load_model, save_model, AnyModel, MODEL_FORMAT_VERSION};
pub use mlp::{Activation, Layer, Mlp};
pub use train::{accuracy, train, TrainConfig, TrainMetrics};

use thiserror::Error;

use crate::linalg::{norm, LinalgError, Matrix, Norm};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {actual} features, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A scalar function of `input_dim()` real features.
///
/// Implementations may assume the input length is `input_dim()`; callers that
/// take user input check it first.
pub trait Model: Sync {
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> f64;
}

/// A model with an analytic input gradient.
pub trait GradientModel: Model {
    /// Writes `∇f(x)` into `out` (length `input_dim()`).
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.input_dim()];
        self.gradient_into(x, &mut g);
        g
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn predict(&self, x: &[f64]) -> f64 {
        (**self).predict(x)
    }
}

impl<M: GradientModel + ?Sized> GradientModel for &M {
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient_into(x, out)
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<(), ModelError> {
    if expected == actual {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { expected, actual })
    }
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest observed `‖∇f‖₂` over a probe set, the empirical stand-in for the
/// gradient bound in the Lipschitz constant `grad_max / (2σ)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LipschitzEstimate {
    pub grad_max: f64,
}

impl LipschitzEstimate {
    /// `grad_max / (2σ)` for the neighborhood variance `sigma2 = σ²`.
    pub fn bound(&self, sigma2: f64) -> f64 {
        self.grad_max / (2.0 * sigma2.sqrt())
    }
}

pub fn estimate_grad_max<M: GradientModel + ?Sized>(model: &M, probes: &Matrix) -> Result<LipschitzEstimate, ModelError> {
    check_dim(model.input_dim(), probes.cols())?;
    if probes.rows() == 0 {
        return Err(ModelError::Invalid("probe set is empty".into()));
    }
    let mut g = vec![0.0; probes.cols()];
    let grad_max = probes.row_iter().fold(0.0_f64, |m, x| {
        model.gradient_into(x, &mut g);
        m.max(norm(&g, Norm::L2))
    });
    Ok(LipschitzEstimate { grad_max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_recover_linear_slope() {
        let theta = [0.5, -2.0, 3.0];
        let f = |x: &[f64]| theta.iter().zip(x).map(|(t, v)| t * v).sum::<f64>() + 1.0;
        let g = finite_diff_gradient(f, &[1.0, 2.0, -1.0], 1e-5);
        for (a, b) in g.iter().zip(theta) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_differences_of_zero_net() {
        let m = Mlp::zeros(&[3, 4, 4, 2]).unwrap();
        let g = finite_diff_gradient(|x| m.predict(x), &[0.3, -0.1, 2.0], 1e-5);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_max_of_zero_net_is_zero() {
        let m = Mlp::zeros(&[2, 10, 10, 2]).unwrap();
        let probes = Matrix::from_rows(&[vec![0.0, 1.0], vec![-3.0, 2.0]]).unwrap();
        assert_eq!(estimate_grad_max(&m, &probes).unwrap().grad_max, 0.0);
    }

    #[test]
    fn grad_max_of_linear_model_is_theta_norm() {
        let m = LinearModel::new(vec![3.0, 4.0], 0.5);
        let probes = Matrix::from_rows(&[vec![0.0, 1.0], vec![-3.0, 2.0], vec![9.0, 9.0]]).unwrap();
        let est = estimate_grad_max(&m, &probes).unwrap();
        assert_eq!(est.grad_max, 5.0);
        assert_eq!(est.bound(4.0), 1.25);
    }

    #[test]
    fn grad_max_rejects_empty_or_mismatched_probes() {
        let m = LinearModel::new(vec![1.0, 1.0], 0.0);
        assert!(estimate_grad_max(&m, &Matrix::zeros(0, 2)).is_err());
        assert!(matches!(
            estimate_grad_max(&m, &Matrix::zeros(2, 3)),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }
}
