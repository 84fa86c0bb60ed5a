//! Small dense linear algebra: row-major matrices, Cholesky solves, norms and
//! the feature/label covariance used by the expected explanation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible Cholesky pivot. Anything at or below this is treated as
/// a rank-deficient (or indefinite) system.
pub const PIVOT_FLOOR: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric positive definite (pivot {pivot} at row {row})")]
    NotSpd { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Vector norm used to compare attributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    L1,
    L2,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting bad shapes and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ · v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.rows,
                actual: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &s) in self.row_iter().zip(v) {
            axpy(s, r, &mut out);
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Adds `value` to every diagonal entry.
    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(v: &[f64], kind: Norm) -> f64 {
    match kind {
        Norm::L1 => v.iter().map(|x| x.abs()).sum(),
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    }
}

/// Norm of `a - b`.
pub fn distance(a: &[f64], b: &[f64], kind: Norm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(norm(&diff, kind))
}

/// Lower-triangular `L` with `L·Lᵀ = a`.
pub fn cholesky_factor(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: a.cols(),
        });
    }
    let scale = a.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(LinalgError::NotSpd {
                    row: i,
                    pivot: f64::NAN,
                });
            }
        }
    }

    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let lj = &l.data[j * n..j * n + j];
        let pivot = a[(j, j)] - dot(lj, lj);
        if !(pivot > PIVOT_FLOOR) {
            return Err(LinalgError::NotSpd { row: j, pivot });
        }
        let diag = pivot.sqrt();
        l[(j, j)] = diag;
        for i in j + 1..n {
            let s = a[(i, j)] - dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
            l[(i, j)] = s / diag;
        }
    }
    Ok(l)
}

/// Solves `L·Lᵀ x = b` given the Cholesky factor.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    let mut y = b.to_vec();
    for i in 0..n {
        let s = dot(&l.row(i)[..i], &y[..i]);
        y[i] = (y[i] - s) / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    Ok(y)
}

pub fn spd_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.rows(),
            actual: b.len(),
        });
    }
    let l = cholesky_factor(a)?;
    cholesky_solve(&l, b)
}

/// Per-feature covariance between the sample rows and a scalar label, with the
/// 1/n divisor: entry i is `(1/n) Σ_b (b_i − mean_i)(y_b − mean_y)`.
pub fn sample_covariance_with_scalar(samples: &Matrix, labels: &[f64]) -> Result<Vec<f64>> {
    let n = samples.rows();
    if labels.len() != n {
        return Err(LinalgError::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if n < 2 {
        return Err(LinalgError::TooFewSamples(n));
    }
    let mean = samples.column_means();
    let label_mean = labels.iter().sum::<f64>() / n as f64;
    let mut cov = vec![0.0; samples.cols()];
    for (row, &y) in samples.row_iter().zip(labels) {
        let dy = y - label_mean;
        for ((c, &v), &m) in cov.iter_mut().zip(row).zip(&mean) {
            *c += (v - m) * dy;
        }
    }
    cov.iter_mut().for_each(|c| *c /= n as f64);
    Ok(cov)
}

/// Centered second-moment matrix `(1/n) Σ (b − mean)(b − mean)ᵀ`.
pub fn sample_covariance_matrix(samples: &Matrix) -> Result<Matrix> {
    let n = samples.rows();
    if n < 2 {
        return Err(LinalgError::TooFewSamples(n));
    }
    let d = samples.cols();
    let mean = samples.column_means();
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in samples.row_iter() {
        for ((c, &v), &m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in 0..=i {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let data = (0..rows * cols)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_spd(n: usize, eps: f64, seed: u64) -> Matrix {
        let m = random_matrix(n, n, seed);
        let mut a = m.transpose().matmul(&m).unwrap();
        a.add_diagonal(eps);
        a
    }

    fn residual(a: &Matrix, x: &[f64], b: &[f64]) -> f64 {
        let ax = a.mul_vec(x).unwrap();
        distance(&ax, b, Norm::L2).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky_factor(&Matrix::identity(3)).unwrap();
        assert_eq!(l, Matrix::identity(3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky_factor(&a).unwrap();
        assert_eq!(l[(0, 0)], 2.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert_eq!(l[(1, 0)], 1.0);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reconstructs_random_spd() {
        let a = random_spd(10, 1.0, 7);
        let l = cholesky_factor(&a).unwrap();
        let rebuilt = l.matmul(&l.transpose()).unwrap();
        let diff: Vec<f64> = rebuilt
            .as_slice()
            .iter()
            .zip(a.as_slice())
            .map(|(x, y)| x - y)
            .collect();
        assert!(norm(&diff, Norm::L2) <= 1e-10 * a.frobenius_norm());
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky_factor(&a),
            Err(LinalgError::NotSpd { row: 1, .. })
        ));
        let asym = Matrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(cholesky_factor(&asym), Err(LinalgError::NotSpd { .. })));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let b = [1.5, -2.0, 3.0];
        assert_eq!(spd_solve(&Matrix::identity(3), &b).unwrap(), b.to_vec());
        let a = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let x = spd_solve(&a, &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_rejects_bad_rhs() {
        assert!(matches!(
            spd_solve(&Matrix::identity(2), &[1.0]),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn norms() {
        assert_eq!(norm(&[3.0, 4.0], Norm::L2), 5.0);
        assert_eq!(norm(&[1.0, -2.0, 3.0], Norm::L1), 6.0);
        assert_eq!(norm(&[0.0, 0.0], Norm::L1), 0.0);
    }

    #[test]
    fn covariance_of_constant_labels_is_zero() {
        let s = random_matrix(6, 3, 1);
        let cov = sample_covariance_with_scalar(&s, &[2.5; 6]).unwrap();
        assert!(cov.iter().all(|&c| c.abs() < 1e-15));
    }

    #[test]
    fn covariance_with_itself_is_variance() {
        let y = [1.0, 2.0, 4.0, 7.0];
        let s = Matrix::from_vec(4, 1, y.to_vec()).unwrap();
        let mean = y.iter().sum::<f64>() / 4.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        let cov = sample_covariance_with_scalar(&s, &y).unwrap();
        assert!((cov[0] - var).abs() < 1e-14);
    }

    #[test]
    fn covariance_matches_two_pass_fixture() {
        let rows = [
            [0.5, 1.0],
            [-1.0, 2.0],
            [2.0, 0.0],
            [1.5, -1.0],
            [0.0, 3.0],
        ];
        let labels = [1.0, 0.0, 2.0, 3.0, -1.0];
        // Two-pass by hand: means, then products of deviations.
        let mean0 = rows.iter().map(|r| r[0]).sum::<f64>() / 5.0;
        let mean1 = rows.iter().map(|r| r[1]).sum::<f64>() / 5.0;
        let mean_y = labels.iter().sum::<f64>() / 5.0;
        let mut expected = [0.0; 2];
        for (r, y) in rows.iter().zip(labels) {
            expected[0] += (r[0] - mean0) * (y - mean_y) / 5.0;
            expected[1] += (r[1] - mean1) * (y - mean_y) / 5.0;
        }
        let s = Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let cov = sample_covariance_with_scalar(&s, &labels).unwrap();
        assert!((cov[0] - expected[0]).abs() < 1e-14);
        assert!((cov[1] - expected[1]).abs() < 1e-14);
    }

    #[test]
    fn covariance_needs_two_samples() {
        let s = Matrix::zeros(1, 2);
        assert_eq!(
            sample_covariance_with_scalar(&s, &[1.0]),
            Err(LinalgError::TooFewSamples(1))
        );
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert_eq!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite(1))
        );
    }

    proptest! {
        #[test]
        fn cholesky_reconstruction(n in 1usize..16, eps in 1e-3f64..10.0, seed in any::<u64>()) {
            let a = random_spd(n, eps, seed);
            let l = cholesky_factor(&a).unwrap();
            let rebuilt = l.matmul(&l.transpose()).unwrap();
            let diff: Vec<f64> = rebuilt.as_slice().iter().zip(a.as_slice()).map(|(x, y)| x - y).collect();
            prop_assert!(norm(&diff, Norm::L2) <= 1e-10 * a.frobenius_norm());
        }

        #[test]
        fn solve_residual(n in 1usize..=32, seed in any::<u64>()) {
            let a = random_spd(n, 1.0, seed);
            let b = random_matrix(1, n, seed ^ 0xABCD).as_slice().to_vec();
            let x = spd_solve(&a, &b).unwrap();
            let bound = 1e-8 * (a.frobenius_norm() * norm(&x, Norm::L2) + norm(&b, Norm::L2));
            prop_assert!(residual(&a, &x, &b) <= bound);
        }

        #[test]
        fn norm_is_homogeneous(v in prop::collection::vec(-1e3f64..1e3, 1..20), alpha in -50.0f64..50.0) {
            for kind in [Norm::L1, Norm::L2] {
                let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
                let lhs = norm(&scaled, kind);
                let rhs = alpha.abs() * norm(&v, kind);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
            }
        }

        #[test]
        fn covariance_is_translation_invariant(
            n in 2usize..40,
            seed in any::<u64>(),
            shift in prop::collection::vec(-100.0f64..100.0, 3),
        ) {
            let s = random_matrix(n, 3, seed);
            let labels = random_matrix(1, n, seed.rotate_left(7)).as_slice().to_vec();
            let mut shifted = s.clone();
            for i in 0..n {
                for (v, c) in shifted.row_mut(i).iter_mut().zip(&shift) {
                    *v += c;
                }
            }
            let a = sample_covariance_with_scalar(&s, &labels).unwrap();
            let b = sample_covariance_with_scalar(&shifted, &labels).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}
