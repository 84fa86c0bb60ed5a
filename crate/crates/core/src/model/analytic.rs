use serde::{Deserialize, Serialize};

use super::{GradientModel, Model};
use crate::linalg::{dot, Matrix};

/// `f(x) = θᵀx + b`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub theta: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn new(theta: Vec<f64>, bias: f64) -> Self {
        Self { theta, bias }
    }
}

impl Model for LinearModel {
    fn input_dim(&self) -> usize {
        self.theta.len()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.theta, x) + self.bias
    }
}

impl GradientModel for LinearModel {
    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.theta);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub dim: usize,
    pub value: f64,
}

impl Model for ConstantModel {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, _x: &[f64]) -> f64 {
        self.value
    }
}

impl GradientModel for ConstantModel {
    fn gradient_into(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `f(x) = xᵀQx + lᵀx + c`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    quadratic: Matrix,
    linear: Vec<f64>,
    constant: f64,
}

impl QuadraticModel {
    pub fn new(quadratic: Matrix, linear: Vec<f64>, constant: f64) -> Option<Self> {
        let d = linear.len();
        (quadratic.rows() == d && quadratic.cols() == d).then_some(Self {
            quadratic,
            linear,
            constant,
        })
    }

    /// `f(x) = x_i²` in `dim` dimensions.
    pub fn square_of(dim: usize, i: usize) -> Self {
        let mut q = Matrix::zeros(dim, dim);
        q[(i, i)] = 1.0;
        Self {
            quadratic: q,
            linear: vec![0.0; dim],
            constant: 0.0,
        }
    }

    pub fn quadratic(&self) -> &Matrix {
        &self.quadratic
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }
}

impl Model for QuadraticModel {
    fn input_dim(&self) -> usize {
        self.linear.len()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let qx: f64 = self
            .quadratic
            .row_iter()
            .zip(x)
            .map(|(row, xi)| xi * dot(row, x))
            .sum();
        qx + dot(&self.linear, x) + self.constant
    }
}

impl GradientModel for QuadraticModel {
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.linear[i]
                + x.iter()
                    .enumerate()
                    .map(|(j, &xj)| (self.quadratic[(i, j)] + self.quadratic[(j, i)]) * xj)
                    .sum::<f64>();
        }
    }
}
