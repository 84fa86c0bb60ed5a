//! Mini-batch Adam on the two-class cross-entropy loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::logistic;
use super::{Layer, Mlp, Model, ModelError};
use crate::datasets::Dataset;
use crate::linalg::Matrix;
use crate::sampling::{derive_seed, seeded_rng};

const INIT_LANE: u64 = 0x1417;
const SHUFFLE_LANE: u64 = 0x5317;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            seed: 0,
            hidden: vec![10, 10],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must have at least one unit");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epochs: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Mean training loss of each epoch.
    pub loss_curve: Vec<f64>,
}

/// Fraction of `rows` whose thresholded prediction (`f ≥ 0.5`) matches the label.
pub fn accuracy<M: Model>(model: &M, data: &Dataset, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let correct = rows
        .iter()
        .filter(|&&i| (model.predict(data.features().row(i)) >= 0.5) == (data.labels()[i] == 1))
        .count();
    correct as f64 / rows.len() as f64
}

fn zeros_like(model: &Mlp) -> Vec<Layer> {
    model
        .layers()
        .iter()
        .map(|l| Layer {
            weights: Matrix::zeros(l.outputs(), l.inputs()),
            bias: vec![0.0; l.outputs()],
        })
        .collect()
}

fn params_mut(layers: &mut [Layer]) -> impl Iterator<Item = &mut f64> {
    layers
        .iter_mut()
        .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
}

/// Trains a fresh network on the dataset's train split and reports accuracy
/// on both splits. Identical inputs give bit-identical weights.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(Mlp, TrainMetrics), ModelError> {
    cfg.validate()?;
    let split = data
        .split()
        .ok_or_else(|| ModelError::Invalid("dataset has no train/test split".into()))?;
    if split.train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if split.test.is_empty() {
        return Err(ModelError::EmptySplit("test"));
    }

    let mut dims = vec![data.dim()];
    dims.extend(&cfg.hidden);
    dims.push(2);
    let mut model = Mlp::glorot(&dims, derive_seed(cfg.seed, &[INIT_LANE]))?;
    let mut first = zeros_like(&model);
    let mut second = zeros_like(&model);
    let mut grads = zeros_like(&model);
    let mut step = 0i32;
    let mut order = split.train.clone();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.copy_from_slice(&split.train);
        order.shuffle(&mut seeded_rng(derive_seed(cfg.seed, &[SHUFFLE_LANE, epoch as u64])));
        let mut epoch_loss = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            params_mut(&mut grads).for_each(|g| *g = 0.0);
            for &i in batch {
                let x = data.features().row(i);
                let y = data.labels()[i];
                let trace = model.trace(x);
                let z = trace.logits();
                let p1 = logistic(z[1] - z[0]);
                // −log softmax(z)[y], via log-sum-exp.
                let zmax = z[0].max(z[1]);
                let lse = zmax + ((z[0] - zmax).exp() + (z[1] - zmax).exp()).ln();
                epoch_loss += lse - z[y as usize];
                let target = f64::from(y);
                let dlogits = [(1.0 - p1) - (1.0 - target), p1 - target];
                model.backward(x, &trace, &dlogits, Some(&mut grads));
            }

            step += 1;
            let scale = 1.0 / batch.len() as f64;
            let correction1 = 1.0 - cfg.adam_beta1.powi(step);
            let correction2 = 1.0 - cfg.adam_beta2.powi(step);
            let updates = params_mut(model.layers_mut())
                .zip(params_mut(&mut grads))
                .zip(params_mut(&mut first))
                .zip(params_mut(&mut second));
            for (((w, g), m), v) in updates {
                let g = *g * scale;
                *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
                *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            }
        }
        loss_curve.push(epoch_loss / order.len() as f64);
    }

    let model = Mlp::new(model.layers().to_vec(), model.activation())?;
    let metrics = TrainMetrics {
        epochs: cfg.epochs,
        train_acc: accuracy(&model, data, &split.train),
        test_acc: accuracy(&model, data, &split.test),
        loss_curve,
    };
    Ok((model, metrics))
}
