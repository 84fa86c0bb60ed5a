use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use super::{check_dim, GradientModel, Model, ModelError};
use crate::linalg::{axpy, dot, Matrix};
use crate::sampling::seeded_rng;

/// Hidden-layer activation. The output layer is always linear logits
/// followed by a two-class softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    /// `x` for `x ≥ 0`, `α(eˣ − 1)` otherwise. The derivative at 0 is taken
    /// from the right (1).
    Elu { alpha: f64 },
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Elu { alpha: 1.0 }
    }
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu { alpha } => {
                if z >= 0.0 {
                    z
                } else {
                    alpha * z.exp_m1()
                }
            }
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Elu { alpha } => {
                if z >= 0.0 {
                    1.0
                } else {
                    alpha * z.exp()
                }
            }
        }
    }
}

/// Affine map `W·h + b` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn forward_into(&self, h: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.row_iter().zip(&self.bias).map(|(w, b)| dot(w, h) + b));
    }
}

/// Binary classifier `d → hidden… → 2` whose scalar output is the softmax
/// probability of class 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
}

#[inline]
pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Pre-activations of every layer from one forward pass.
pub(crate) struct Trace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("network has at least one layer")
    }
}

impl Mlp {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Invalid("network has no layers".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(ModelError::Invalid(format!(
                    "layer {i}: bias has {} entries for {} outputs",
                    layer.bias.len(),
                    layer.outputs()
                )));
            }
            if layer.inputs() == 0 || layer.outputs() == 0 {
                return Err(ModelError::Invalid(format!("layer {i} is empty")));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.inputs() != layer.outputs() {
                    return Err(ModelError::Invalid(format!(
                        "layer {} takes {} inputs but layer {i} produces {}",
                        i + 1,
                        next.inputs(),
                        layer.outputs()
                    )));
                }
            }
            if layer
                .weights
                .as_slice()
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(ModelError::Invalid(format!("layer {i} has non-finite parameters")));
            }
        }
        if layers.last().map(Layer::outputs) != Some(2) {
            return Err(ModelError::Invalid("output layer must have 2 logits".into()));
        }
        let Activation::Elu { alpha } = activation;
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(ModelError::Invalid(format!("ELU alpha must be positive, got {alpha}")));
        }
        Ok(Self { layers, activation })
    }

    /// All-zero parameters with the given layer widths (input first, 2 last).
    pub fn zeros(dims: &[usize]) -> Result<Self, ModelError> {
        Self::from_fn(dims, |_, _| 0.0)
    }

    /// Glorot-uniform weights in `±√(6/(fan_in + fan_out))`, zero biases,
    /// drawn from the pinned generator.
    pub fn glorot(dims: &[usize], seed: u64) -> Result<Self, ModelError> {
        let mut rng = seeded_rng(seed);
        Self::from_fn(dims, |fan_in, fan_out| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            (2.0 * u - 1.0) * limit
        })
    }

    fn from_fn(dims: &[usize], mut weight: impl FnMut(usize, usize) -> f64) -> Result<Self, ModelError> {
        if dims.len() < 2 {
            return Err(ModelError::Invalid("need at least input and output widths".into()));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let data = (0..fan_in * fan_out).map(|_| weight(fan_in, fan_out)).collect();
                Ok(Layer {
                    weights: Matrix::from_vec(fan_out, fan_in, data)?,
                    bias: vec![0.0; fan_out],
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Self::new(layers, Activation::default())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let mut z = Vec::with_capacity(layer.outputs());
            layer.forward_into(input, &mut z);
            if l < last {
                post.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            pre.push(z);
        }
        Trace { pre, post }
    }

    /// Backpropagates `dlogits` through the network. Parameter gradients are
    /// accumulated into `param_grads` when given; the input gradient is
    /// returned.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        trace: &Trace,
        dlogits: &[f64],
        mut param_grads: Option<&mut [Layer]>,
    ) -> Vec<f64> {
        let mut delta = dlogits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = if l == 0 { x } else { &trace.post[l - 1] };
            if let Some(grads) = param_grads.as_deref_mut() {
                let g = &mut grads[l];
                for (o, &dz) in delta.iter().enumerate() {
                    axpy(dz, input, g.weights.row_mut(o));
                    g.bias[o] += dz;
                }
            }
            let mut upstream = layer.weights.tr_mul_vec(&delta).expect("shapes are validated");
            if l > 0 {
                for (u, &z) in upstream.iter_mut().zip(&trace.pre[l - 1]) {
                    *u *= self.activation.derivative(z);
                }
            }
            delta = upstream;
        }
        delta
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; 2], ModelError> {
        check_dim(self.input_dim(), x.len())?;
        let t = self.trace(x);
        let z = t.logits();
        Ok([z[0], z[1]])
    }

    /// Softmax probability of class 1.
    pub fn forward(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.predict(x))
    }

    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.gradient(x))
    }
}

/// Widths up to this many units (summed over layers) are evaluated on the stack.
const STACK_UNITS: usize = 256;
const STACK_WIDTH: usize = 64;

impl Mlp {
    fn fits_on_stack(&self) -> bool {
        let total: usize = self.layers.iter().map(Layer::outputs).sum();
        total <= STACK_UNITS
            && self
                .layers
                .iter()
                .all(|l| l.outputs() <= STACK_WIDTH && l.inputs() <= STACK_WIDTH)
    }

    /// Forward pass into flat buffers; layer `l`'s pre-activations start at
    /// `offsets[l]`. Returns the two logits.
    fn forward_flat(&self, x: &[f64], pre: &mut [f64; STACK_UNITS], post: &mut [f64; STACK_UNITS]) -> (f64, f64) {
        let last = self.layers.len() - 1;
        let mut offset = 0;
        let mut input_offset = usize::MAX;
        for (l, layer) in self.layers.iter().enumerate() {
            let out = layer.outputs();
            for o in 0..out {
                let w = layer.weights.row(o);
                let z = if input_offset == usize::MAX {
                    dot(w, x)
                } else {
                    dot(w, &post[input_offset..input_offset + layer.inputs()])
                } + layer.bias[o];
                pre[offset + o] = z;
                if l < last {
                    post[offset + o] = self.activation.apply(z);
                }
            }
            input_offset = offset;
            offset += out;
        }
        (pre[offset - 2], pre[offset - 1])
    }
}

impl Model for Mlp {
    fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        if self.fits_on_stack() {
            let mut pre = [0.0; STACK_UNITS];
            let mut post = [0.0; STACK_UNITS];
            let (z0, z1) = self.forward_flat(x, &mut pre, &mut post);
            return logistic(z1 - z0);
        }
        let t = self.trace(x);
        let z = t.logits();
        logistic(z[1] - z[0])
    }
}

impl GradientModel for Mlp {
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        if !self.fits_on_stack() {
            let t = self.trace(x);
            let z = t.logits();
            let p = logistic(z[1] - z[0]);
            let s = p * (1.0 - p);
            out.copy_from_slice(&self.backward(x, &t, &[-s, s], None));
            return;
        }
        let mut pre = [0.0; STACK_UNITS];
        let mut post = [0.0; STACK_UNITS];
        let (z0, z1) = self.forward_flat(x, &mut pre, &mut post);
        let p = logistic(z1 - z0);
        let s = p * (1.0 - p);

        let mut delta = [0.0; STACK_WIDTH];
        let mut upstream = [0.0; STACK_WIDTH];
        delta[0] = -s;
        delta[1] = s;
        let mut offset: usize = self.layers.iter().map(Layer::outputs).sum();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            offset -= layer.outputs();
            let up = &mut upstream[..layer.inputs()];
            up.fill(0.0);
            for (o, row) in layer.weights.row_iter().enumerate() {
                axpy(delta[o], row, up);
            }
            if l > 0 {
                let prev = offset - layer.inputs();
                for (u, &z) in up.iter_mut().zip(&pre[prev..offset]) {
                    *u *= self.activation.derivative(z);
                }
            }
            delta[..layer.inputs()].copy_from_slice(up);
        }
        out.copy_from_slice(&delta[..self.input_dim()]);
    }
}
