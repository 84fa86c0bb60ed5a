//! Feature attributions for black-box functions from Gaussian perturbations:
//! SmoothGrad, continuous LIME (C-LIME) and ridge C-LIME, a Monte-Carlo
//! estimate of their shared expected explanation, a small MLP to explain, and
//! the experiment harness that compares them.

// Negated comparisons are how NaN is rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod experiments;
pub mod explainers;
pub mod linalg;
pub mod model;
pub mod sampling;

pub use datasets::Dataset;
pub use explainers::{AttributionVector, Method, SurrogateFit};
pub use linalg::{Matrix, Norm};
pub use model::{AnyModel, GradientModel, Mlp, Model, TrainConfig};
pub use sampling::PerturbationConfig;
