//! Versioned JSON model documents.
//!
//! Networks:
//!
//! ```json
//! {"version": 1, "dims": [2, 10, 10, 2], "weights": [[...], ...],
//!  "biases": [[...], ...], "activation": "elu", "alpha": 1.0}
//! ```
//!
//! `weights[l]` is layer `l`'s `dims[l+1] × dims[l]` matrix flattened row-major
//! (one row per output unit). Documents without a `"kind"` field are networks.
//!
//! Closed-form surrogates use `"kind": "quadratic"` and describe
//! `f(x) = xᵀQx + lᵀx + c`:
//!
//! ```json
//! {"version": 1, "kind": "quadratic", "quadratic": [[1, 0], [0, 0]],
//!  "linear": [0, 0], "constant": 0}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, GradientModel, Layer, Mlp, Model, ModelError, QuadraticModel};
use crate::linalg::Matrix;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpDocument {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: String,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticDocument {
    version: u32,
    kind: String,
    quadratic: Vec<Vec<f64>>,
    linear: Vec<f64>,
    constant: f64,
}

/// Any model that can be stored as a document.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Mlp(Mlp),
    Quadratic(QuadraticModel),
}

impl Model for AnyModel {
    fn input_dim(&self) -> usize {
        match self {
            AnyModel::Mlp(m) => m.input_dim(),
            AnyModel::Quadratic(m) => m.input_dim(),
        }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            AnyModel::Mlp(m) => m.predict(x),
            AnyModel::Quadratic(m) => m.predict(x),
        }
    }
}

impl GradientModel for AnyModel {
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            AnyModel::Mlp(m) => m.gradient_into(x, out),
            AnyModel::Quadratic(m) => m.gradient_into(x, out),
        }
    }
}

impl From<Mlp> for AnyModel {
    fn from(m: Mlp) -> Self {
        AnyModel::Mlp(m)
    }
}

impl From<QuadraticModel> for AnyModel {
    fn from(m: QuadraticModel) -> Self {
        AnyModel::Quadratic(m)
    }
}

fn check_version(version: u32) -> Result<(), ModelError> {
    if version == MODEL_FORMAT_VERSION {
        Ok(())
    } else {
        Err(ModelError::Invalid(format!(
            "unsupported model format version {version} (expected {MODEL_FORMAT_VERSION})"
        )))
    }
}

impl Mlp {
    pub fn to_json(&self) -> Result<String, ModelError> {
        let Activation::Elu { alpha } = self.activation();
        let doc = MlpDocument {
            version: MODEL_FORMAT_VERSION,
            kind: None,
            dims: self.dims(),
            weights: self.layers().iter().map(|l| l.weights.as_slice().to_vec()).collect(),
            biases: self.layers().iter().map(|l| l.bias.clone()).collect(),
            activation: "elu".into(),
            alpha,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    fn from_document(doc: MlpDocument) -> Result<Self, ModelError> {
        check_version(doc.version)?;
        if doc.activation != "elu" {
            return Err(ModelError::Invalid(format!("unsupported activation {:?}", doc.activation)));
        }
        let layer_count = doc.dims.len().saturating_sub(1);
        if layer_count == 0 || doc.weights.len() != layer_count || doc.biases.len() != layer_count {
            return Err(ModelError::Invalid(format!(
                "dims {:?} imply {layer_count} layers, found {} weight and {} bias arrays",
                doc.dims,
                doc.weights.len(),
                doc.biases.len()
            )));
        }
        let layers = doc
            .dims
            .windows(2)
            .zip(doc.weights)
            .zip(doc.biases)
            .map(|((w, weights), bias)| {
                Ok(Layer {
                    weights: Matrix::from_vec(w[1], w[0], weights)?,
                    bias,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Mlp::new(layers, Activation::Elu { alpha: doc.alpha })
    }
}

impl QuadraticModel {
    pub fn to_json(&self) -> Result<String, ModelError> {
        let doc = QuadraticDocument {
            version: MODEL_FORMAT_VERSION,
            kind: "quadratic".into(),
            quadratic: self.quadratic().row_iter().map(<[f64]>::to_vec).collect(),
            linear: self.linear().to_vec(),
            constant: self.constant(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

impl AnyModel {
    pub fn to_json(&self) -> Result<String, ModelError> {
        match self {
            AnyModel::Mlp(m) => m.to_json(),
            AnyModel::Quadratic(m) => m.to_json(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let kind = value.get("kind").and_then(|k| k.as_str()).unwrap_or("mlp");
        match kind {
            "mlp" => Ok(AnyModel::Mlp(Mlp::from_document(serde_json::from_value(value)?)?)),
            "quadratic" => {
                let doc: QuadraticDocument = serde_json::from_value(value)?;
                check_version(doc.version)?;
                let quadratic = if doc.quadratic.is_empty() {
                    Matrix::zeros(0, 0)
                } else {
                    Matrix::from_rows(&doc.quadratic)?
                };
                QuadraticModel::new(quadratic, doc.linear, doc.constant)
                    .map(AnyModel::Quadratic)
                    .ok_or_else(|| ModelError::Invalid("quadratic matrix must be d × d".into()))
            }
            other => Err(ModelError::Invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

pub fn save_model(model: &AnyModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AnyModel, ModelError> {
    AnyModel::from_json(&fs::read_to_string(path)?)
}
