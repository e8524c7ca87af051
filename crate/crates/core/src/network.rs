//! Feed-forward network producing the scalar nonlinear term of the
//! predictor, with exact reverse-mode gradients.
//!
//! Hidden layer `l` computes `g_l = a(W_lᵀ g_{l-1} + b_l)` with
//! `W_l` of shape `n_{l-1} × n_l`. The output layer is `W_{L+1}ᵀ g_L`
//! with no bias: the per-individual fixed effect plays the intercept role.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Elu,
    Sigmoid,
    Tanh,
    Softplus,
    Relu,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "elu" => Ok(Self::Elu),
            "sigmoid" => Ok(Self::Sigmoid),
            "tanh" => Ok(Self::Tanh),
            "softplus" => Ok(Self::Softplus),
            "relu" => Ok(Self::Relu),
            other => Err(Error::Config(format!("unsupported activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Elu => "elu",
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Softplus => "softplus",
            Self::Relu => "relu",
        };
        f.write_str(s)
    }
}

/// Applies the activation to a scalar. `alpha` is only used by ELU.
pub fn activate(x: f64, kind: Activation, alpha: f64) -> f64 {
    match kind {
        Activation::Elu => {
            if x >= 0.0 {
                x
            } else {
                alpha * x.exp_m1()
            }
        }
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => x.tanh(),
        Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        Activation::Relu => x.max(0.0),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the activation at pre-activation `x`.
pub fn activate_deriv(x: f64, kind: Activation, alpha: f64) -> f64 {
    match kind {
        Activation::Elu => {
            if x >= 0.0 {
                1.0
            } else {
                alpha * x.exp()
            }
        }
        Activation::Sigmoid => {
            let s = sigmoid(x);
            s * (1.0 - s)
        }
        Activation::Tanh => {
            let t = x.tanh();
            1.0 - t * t
        }
        Activation::Softplus => sigmoid(x),
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn default_elu_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_elu_alpha")]
    pub elu_alpha: f64,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_sizes,
            activation: Activation::Elu,
            elu_alpha: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("network input dimension must be at least 1".into()));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::Config("network needs at least one hidden layer".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be at least 1".into()));
        }
        if !(self.elu_alpha > 0.0) || !self.elu_alpha.is_finite() {
            return Err(Error::Config("ELU alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.hidden_sizes.len()
    }

    /// Node counts `(p, n_1, ..., n_L, 1)`.
    fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_sizes);
        dims.push(1);
        dims
    }

    /// Weight matrix shapes for layers `1..=L+1`.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_dims().windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// `Σ_{l=1..L} n_{l-1}·n_l`, the number of weights covered by the
    /// weight-decay penalty.
    pub fn hidden_weight_count(&self) -> usize {
        let shapes = self.weight_shapes();
        shapes[..shapes.len() - 1].iter().map(|(r, c)| r * c).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight_shapes().iter().map(|(r, c)| r * c).sum::<usize>()
            + self.hidden_sizes.iter().sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    /// `W^(1) .. W^(L+1)`; the last one has a single column.
    pub weights: Vec<Array2<f64>>,
    /// `b^(1) .. b^(L)`.
    pub biases: Vec<Array1<f64>>,
}

impl NetworkParameters {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            weights: spec
                .weight_shapes()
                .into_iter()
                .map(Array2::zeros)
                .collect(),
            biases: spec.hidden_sizes.iter().map(|&n| Array1::zeros(n)).collect(),
        }
    }

    /// Checks that the parameter shapes agree with `spec`.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.weight_shapes();
        if self.weights.len() != shapes.len() || self.biases.len() != spec.hidden_sizes.len() {
            return Err(Error::Shape(format!(
                "network has {} weight matrices and {} bias vectors, spec needs {} and {}",
                self.weights.len(),
                self.biases.len(),
                shapes.len(),
                spec.hidden_sizes.len()
            )));
        }
        for (l, (w, &shape)) in self.weights.iter().zip(&shapes).enumerate() {
            if w.dim() != shape {
                return Err(Error::Shape(format!(
                    "weight matrix {} has shape {:?}, expected {:?}",
                    l + 1,
                    w.dim(),
                    shape
                )));
            }
        }
        for (l, (b, &n)) in self.biases.iter().zip(&spec.hidden_sizes).enumerate() {
            if b.len() != n {
                return Err(Error::Shape(format!(
                    "bias {} has length {}, expected {n}",
                    l + 1,
                    b.len()
                )));
            }
        }
        Ok(())
    }

    pub fn output_weights(&self) -> &Array2<f64> {
        self.weights.last().expect("network has an output layer")
    }

    pub fn output_weights_mut(&mut self) -> &mut Array2<f64> {
        self.weights.last_mut().expect("network has an output layer")
    }

    /// Sum of squared hidden-layer weights (output weights excluded).
    pub fn hidden_weight_sq_sum(&self) -> f64 {
        let n = self.weights.len();
        self.weights[..n - 1]
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn flat_len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Layer-major: `W^(1), b^(1), W^(2), b^(2), ..., W^(L+1)`; each matrix
    /// column-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        self.flatten_into(&mut out);
        out
    }

    pub(crate) fn flatten_into(&self, out: &mut Vec<f64>) {
        for (l, w) in self.weights.iter().enumerate() {
            out.extend(w.t().iter().copied());
            if let Some(b) = self.biases.get(l) {
                out.extend(b.iter().copied());
            }
        }
    }

    pub fn unflatten(values: &[f64], spec: &NetworkSpec) -> Result<Self> {
        let shapes = spec.weight_shapes();
        let expected = spec.parameter_count();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "flat network vector has length {}, expected {expected}",
                values.len()
            )));
        }
        let mut offset = 0;
        let mut weights = Vec::with_capacity(shapes.len());
        let mut biases = Vec::with_capacity(spec.hidden_sizes.len());
        for (l, &(r, c)) in shapes.iter().enumerate() {
            let w = Array2::from_shape_vec((r, c).f(), values[offset..offset + r * c].to_vec())
                .map_err(|e| Error::Shape(e.to_string()))?;
            // Normalize to standard layout so equality and iteration behave uniformly.
            weights.push(w.as_standard_layout().into_owned());
            offset += r * c;
            if let Some(&n) = spec.hidden_sizes.get(l) {
                biases.push(Array1::from(values[offset..offset + n].to_vec()));
                offset += n;
            }
        }
        Ok(Self { weights, biases })
    }
}

/// Uniform Glorot-style initialization: weights on `[-r, r]` with
/// `r = sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_parameters(spec: &NetworkSpec, seed: u64) -> NetworkParameters {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParameters::zeros(spec);
    for w in &mut params.weights {
        let (fan_in, fan_out) = w.dim();
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        // Fill column-major so the draw order matches the flat ordering.
        for mut col in w.columns_mut() {
            for v in col.iter_mut() {
                *v = rng.random_range(-r..=r);
            }
        }
    }
    params
}

fn check_input(spec: &NetworkSpec, x: ArrayView1<f64>) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(Error::Shape(format!(
            "network input has length {}, expected {}",
            x.len(),
            spec.input_dim
        )));
    }
    Ok(())
}

pub fn forward(params: &NetworkParameters, spec: &NetworkSpec, x: ArrayView1<f64>) -> Result<f64> {
    check_input(spec, x)?;
    params.check(spec)?;
    Ok(forward_unchecked(params, spec, x))
}

pub(crate) fn forward_unchecked(
    params: &NetworkParameters,
    spec: &NetworkSpec,
    x: ArrayView1<f64>,
) -> f64 {
    let mut g = x.to_owned();
    for (w, b) in params.weights.iter().zip(&params.biases) {
        let mut z = w.t().dot(&g) + b;
        z.mapv_inplace(|v| activate(v, spec.activation, spec.elu_alpha));
        g = z;
    }
    params.output_weights().column(0).dot(&g)
}

/// Output value together with its gradient with respect to every parameter
/// and the input.
#[derive(Debug, Clone)]
pub struct Backward {
    pub value: f64,
    pub grad: NetworkParameters,
    pub input_grad: Array1<f64>,
}

pub fn backward(
    params: &NetworkParameters,
    spec: &NetworkSpec,
    x: ArrayView1<f64>,
) -> Result<Backward> {
    check_input(spec, x)?;
    params.check(spec)?;
    let mut grad = NetworkParameters::zeros(spec);
    let (value, input_grad) = backward_accumulate(params, spec, x, 1.0, &mut grad);
    Ok(Backward {
        value,
        grad,
        input_grad,
    })
}

/// Adds `scale · ∂out/∂θ` into `grad` and returns `(out, scale · ∂out/∂x)`.
pub(crate) fn backward_accumulate(
    params: &NetworkParameters,
    spec: &NetworkSpec,
    x: ArrayView1<f64>,
    scale: f64,
    grad: &mut NetworkParameters,
) -> (f64, Array1<f64>) {
    let hidden = params.biases.len();
    let mut activations: Vec<Array1<f64>> = Vec::with_capacity(hidden + 1);
    let mut pre: Vec<Array1<f64>> = Vec::with_capacity(hidden);
    activations.push(x.to_owned());
    for (w, b) in params.weights.iter().zip(&params.biases) {
        let z = w.t().dot(activations.last().unwrap()) + b;
        activations.push(z.mapv(|v| activate(v, spec.activation, spec.elu_alpha)));
        pre.push(z);
    }
    let out_w = params.output_weights().column(0);
    let value = out_w.dot(&activations[hidden]);

    // d(out)/d(W^(L+1)) = g^(L); upstream signal into g^(L) is W^(L+1).
    {
        let mut gcol = grad.weights[hidden].column_mut(0);
        gcol.scaled_add(scale, &activations[hidden]);
    }
    let mut delta_g: Array1<f64> = out_w.to_owned() * scale;
    for l in (0..hidden).rev() {
        let delta_z: Array1<f64> = &delta_g
            * &pre[l].mapv(|v| activate_deriv(v, spec.activation, spec.elu_alpha));
        // W^(l) gradient = g^(l-1) ⊗ delta_z
        let g_prev = &activations[l];
        let gw = &mut grad.weights[l];
        for (i, &gi) in g_prev.iter().enumerate() {
            if gi != 0.0 {
                let mut row = gw.row_mut(i);
                row.scaled_add(gi, &delta_z);
            }
        }
        grad.biases[l] += &delta_z;
        delta_g = params.weights[l].dot(&delta_z);
    }
    (value, delta_g)
}

/// Reusable buffers for repeated forward/backward passes over one network.
/// Every weight matrix must be in standard (row-major) layout.
pub(crate) struct Workspace {
    activations: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl NetworkParameters {
    /// Copy with every matrix in standard layout, if one is not already.
    pub(crate) fn standard_layout(&self) -> Option<Self> {
        if self.weights.iter().all(|w| w.is_standard_layout()) {
            return None;
        }
        Some(Self {
            weights: self.weights.iter().map(|w| w.as_standard_layout().into_owned()).collect(),
            biases: self.biases.clone(),
        })
    }
}

impl Workspace {
    pub(crate) fn new(spec: &NetworkSpec) -> Self {
        let mut activations = vec![vec![0.0; spec.input_dim]];
        activations.extend(spec.hidden_sizes.iter().map(|&n| vec![0.0; n]));
        let widest = spec.hidden_sizes.iter().copied().max().unwrap_or(0);
        Self {
            activations,
            pre: spec.hidden_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
        }
    }

    /// Network output at `x`; the intermediate state is kept for [`Self::backward`].
    pub(crate) fn forward(&mut self, params: &NetworkParameters, spec: &NetworkSpec, x: ArrayView1<f64>) -> f64 {
        for (a, &v) in self.activations[0].iter_mut().zip(x.iter()) {
            *a = v;
        }
        for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
            let w = w.as_slice().expect("standard layout");
            let n_out = b.len();
            let (head, tail) = self.activations.split_at_mut(l + 1);
            let pre = &mut self.pre[l];
            pre.copy_from_slice(b.as_slice().expect("contiguous bias"));
            for (i, &a) in head[l].iter().enumerate() {
                for (p, &wij) in pre.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                    *p += a * wij;
                }
            }
            for (out, &p) in tail[0].iter_mut().zip(pre.iter()) {
                *out = activate(p, spec.activation, spec.elu_alpha);
            }
        }
        let out_w = params.output_weights().as_slice().expect("standard layout");
        self.activations.last().expect("input layer").iter().zip(out_w).map(|(a, w)| a * w).sum()
    }

    /// Adds `scale · ∂out/∂θ` at the point of the last [`Self::forward`] call.
    pub(crate) fn backward(
        &mut self,
        params: &NetworkParameters,
        spec: &NetworkSpec,
        scale: f64,
        grad: &mut NetworkParameters,
    ) {
        let hidden = params.biases.len();
        let out_w = params.output_weights().as_slice().expect("standard layout");
        let g = grad.weights[hidden].as_slice_mut().expect("standard layout");
        for (gi, &a) in g.iter_mut().zip(&self.activations[hidden]) {
            *gi += scale * a;
        }
        self.delta.clear();
        self.delta.extend(out_w.iter().map(|w| scale * w));
        for l in (0..hidden).rev() {
            let n_out = params.biases[l].len();
            for (d, &p) in self.delta.iter_mut().zip(&self.pre[l]) {
                *d *= activate_deriv(p, spec.activation, spec.elu_alpha);
            }
            for (gb, &d) in grad.biases[l].iter_mut().zip(&self.delta) {
                *gb += d;
            }
            let gw = grad.weights[l].as_slice_mut().expect("standard layout");
            for (i, &a) in self.activations[l].iter().enumerate() {
                if a != 0.0 {
                    for (g, &d) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(&self.delta) {
                        *g += a * d;
                    }
                }
            }
            if l > 0 {
                let w = params.weights[l].as_slice().expect("standard layout");
                self.delta_prev.clear();
                self.delta_prev.extend((0..self.activations[l].len()).map(|i| {
                    w[i * n_out..(i + 1) * n_out].iter().zip(&self.delta).map(|(a, b)| a * b).sum::<f64>()
                }));
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }
    }
}
