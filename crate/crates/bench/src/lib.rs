//! Fixtures shared by the benchmarks.

use smoothlime::datasets::{generate_simulated, split_dataset};
use smoothlime::linalg::Matrix;
use smoothlime::{Mlp, TrainConfig};

/// The 15-epoch model on the simulated two-cluster data.
pub fn trained_model() -> Mlp {
    let data = split_dataset(&generate_simulated(1000, 0), 0.8, 0).expect("split");
    smoothlime::model::train(&data, &TrainConfig::default()).expect("training").0
}

/// Well-conditioned SPD matrix of size `d`: `I·d + 1·1ᵀ`.
pub fn spd(d: usize) -> Matrix {
    let mut m = Matrix::from_vec(d, d, vec![1.0; d * d]).expect("shape");
    m.add_diagonal(d as f64);
    m
}
