//! The semiparametric panel quantile predictor
//! `Q(i, t) = Z_itᵀβ + ANN(X_it) + α_i`, its two restrictions, and the
//! penalized smoothed composite objective
//!
//! ```text
//! L(θ) = 1/(K·N·T) Σ_k Σ_i Σ_t w_k ρ^ε_{τ_k}(Y_it − Q(i, t))
//!      + λ₁/N · Σ_i h^ε(α_i) + λ₂/N_L · Σ_{l ≤ L} ‖W^(l)‖²
//! ```
//!
//! with `N_L` the number of hidden-layer weights. One parameter set serves
//! every level of the quantile grid.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{
    huber_deriv_unchecked, huber_unchecked, smoothed_pinball_deriv_unchecked,
    smoothed_pinball_unchecked, SmoothingThreshold, TauGrid,
};
use crate::network::{self, NetworkParameters, NetworkSpec};
use crate::paneldata::PanelDataset;
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Linear part, network and fixed effects.
    #[default]
    Psqrnn,
    /// Linear part and fixed effects only.
    #[serde(rename = "linear")]
    LinearPanelQr,
    /// Network only; no linear part and fixed effects frozen at zero.
    Qrnn,
}

impl ModelKind {
    pub fn has_network(self) -> bool {
        self != ModelKind::LinearPanelQr
    }

    pub fn has_linear(self) -> bool {
        self != ModelKind::Qrnn
    }

    pub fn has_fixed_effects(self) -> bool {
        self != ModelKind::Qrnn
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psqrnn" => Ok(ModelKind::Psqrnn),
            "linear" => Ok(ModelKind::LinearPanelQr),
            "qrnn" => Ok(ModelKind::Qrnn),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (psqrnn, linear, qrnn)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Psqrnn => "psqrnn",
            ModelKind::LinearPanelQr => "linear",
            ModelKind::Qrnn => "qrnn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// L1 (Huber-smoothed) strength on the fixed effects.
    pub lambda1: f64,
    /// Weight decay on hidden-layer weights.
    pub lambda2: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.005,
            lambda2: 0.01,
        }
    }
}

impl PenaltyConfig {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        let p = Self { lambda1, lambda2 };
        p.validate()?;
        Ok(p)
    }

    pub fn none() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite())
            || !(self.lambda2 >= 0.0 && self.lambda2.is_finite())
        {
            return Err(Error::Config(format!(
                "penalties must be finite and nonnegative (got {}, {})",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Network architecture together with its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: NetworkParameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub beta: Array1<f64>,
    pub alpha: Array1<f64>,
    pub network: Option<Network>,
}

impl ModelParameters {
    /// All-zero parameters shaped for `kind`. `spec` is ignored for the
    /// linear kind and required otherwise.
    pub fn zeros(kind: ModelKind, q: usize, n: usize, spec: Option<&NetworkSpec>) -> Result<Self> {
        let network = if kind.has_network() {
            let spec = spec.ok_or_else(|| {
                Error::Config(format!("model kind '{kind}' needs a network specification"))
            })?;
            spec.validate()?;
            Some(Network {
                spec: spec.clone(),
                params: NetworkParameters::zeros(spec),
            })
        } else {
            None
        };
        Ok(Self {
            beta: Array1::zeros(if kind.has_linear() { q } else { 0 }),
            alpha: Array1::zeros(n),
            network,
        })
    }

    /// Checks parameter shapes against `kind` and the dataset dimensions.
    pub fn check(&self, kind: ModelKind, q: usize, p: usize, n: usize) -> Result<()> {
        let expected_q = if kind.has_linear() { q } else { 0 };
        if self.beta.len() != expected_q {
            return Err(Error::Shape(format!(
                "beta has length {}, expected {expected_q}",
                self.beta.len()
            )));
        }
        if self.alpha.len() != n {
            return Err(Error::Shape(format!(
                "alpha has length {}, expected {n}",
                self.alpha.len()
            )));
        }
        if !kind.has_fixed_effects() && self.alpha.iter().any(|&a| a != 0.0) {
            return Err(Error::Config("QRNN fixed effects must be zero".into()));
        }
        match (&self.network, kind.has_network()) {
            (Some(net), true) => {
                if net.spec.input_dim != p {
                    return Err(Error::Shape(format!(
                        "network expects {} inputs, dataset has p = {p}",
                        net.spec.input_dim
                    )));
                }
                net.params.check(&net.spec)?;
            }
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Config("linear panel model must not carry a network".into()))
            }
            (None, true) => {
                return Err(Error::Config(format!("model kind '{kind}' needs a network")))
            }
        }
        Ok(())
    }

    /// Number of free (trainable) parameters for `kind`.
    pub fn free_len(&self, kind: ModelKind) -> usize {
        let mut len = 0;
        if kind.has_linear() {
            len += self.beta.len();
        }
        if kind.has_fixed_effects() {
            len += self.alpha.len();
        }
        if let Some(net) = &self.network {
            len += net.params.flat_len();
        }
        len
    }

    /// Free parameters in the order `β, α, network` (frozen blocks omitted).
    pub fn to_free_vector(&self, kind: ModelKind) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.free_len(kind));
        if kind.has_linear() {
            out.extend(self.beta.iter().copied());
        }
        if kind.has_fixed_effects() {
            out.extend(self.alpha.iter().copied());
        }
        if let Some(net) = &self.network {
            net.params.flatten_into(&mut out);
        }
        out
    }

    /// Inverse of [`to_free_vector`](Self::to_free_vector), using `self` as
    /// the shape template.
    pub fn with_free_vector(&self, kind: ModelKind, values: &[f64]) -> Result<Self> {
        if values.len() != self.free_len(kind) {
            return Err(Error::Shape(format!(
                "free parameter vector has length {}, expected {}",
                values.len(),
                self.free_len(kind)
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        if kind.has_linear() {
            let q = self.beta.len();
            out.beta = Array1::from(values[..q].to_vec());
            offset += q;
        }
        if kind.has_fixed_effects() {
            let n = self.alpha.len();
            out.alpha = Array1::from(values[offset..offset + n].to_vec());
            offset += n;
        }
        if let Some(net) = &mut out.network {
            net.params = NetworkParameters::unflatten(&values[offset..], &net.spec)?;
        }
        Ok(out)
    }

    fn zeros_like(&self) -> Self {
        Self {
            beta: Array1::zeros(self.beta.len()),
            alpha: Array1::zeros(self.alpha.len()),
            network: self.network.as_ref().map(|n| Network {
                spec: n.spec.clone(),
                params: NetworkParameters::zeros(&n.spec),
            }),
        }
    }
}

#[inline]
fn predict_unchecked(
    params: &ModelParameters,
    kind: ModelKind,
    z: ArrayView1<f64>,
    x: ArrayView1<f64>,
    individual: usize,
) -> f64 {
    let mut value = 0.0;
    if kind.has_linear() {
        value += z.dot(&params.beta);
    }
    if let Some(net) = &params.network {
        value += network::forward_unchecked(&net.params, &net.spec, x);
    }
    if kind.has_fixed_effects() {
        value += params.alpha[individual];
    }
    value
}

/// `zᵀβ + ANN(x) + α_i`, restricted according to `kind`. `individual` is a
/// zero-based index.
pub fn predict(
    params: &ModelParameters,
    kind: ModelKind,
    z: ArrayView1<f64>,
    x: ArrayView1<f64>,
    individual: usize,
) -> Result<f64> {
    if individual >= params.alpha.len() {
        return Err(Error::Lookup(format!(
            "individual index {individual} out of range (N = {})",
            params.alpha.len()
        )));
    }
    let q = if kind.has_linear() { params.beta.len() } else { z.len() };
    if kind.has_linear() && z.len() != q {
        return Err(Error::Shape(format!(
            "parametric covariates have length {}, expected {q}",
            z.len()
        )));
    }
    let p = params
        .network
        .as_ref()
        .map(|n| n.spec.input_dim)
        .unwrap_or(x.len());
    params.check(kind, z.len(), p, params.alpha.len())?;
    if x.len() != p {
        return Err(Error::Shape(format!(
            "network covariates have length {}, expected {p}",
            x.len()
        )));
    }
    Ok(predict_unchecked(params, kind, z, x, individual))
}

/// Loss and penalty components of the objective at one smoothing level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    /// `1/(KNT) Σ w_k ρ^ε(u)`; the quantity BIC is computed from.
    pub data_loss: f64,
    pub alpha_penalty: f64,
    pub weight_penalty: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.data_loss + self.alpha_penalty + self.weight_penalty
    }
}

/// The penalized smoothed objective bound to a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub dataset: &'a PanelDataset,
    pub kind: ModelKind,
    pub grid: &'a TauGrid,
    pub penalties: PenaltyConfig,
    pub execution: Execution,
}

struct IndividualTerms {
    loss: f64,
    grad: Option<ModelParameters>,
}

impl<'a> Objective<'a> {
    pub fn new(
        dataset: &'a PanelDataset,
        kind: ModelKind,
        grid: &'a TauGrid,
        penalties: PenaltyConfig,
    ) -> Self {
        Self {
            dataset,
            kind,
            grid,
            penalties,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Validates the dataset and parameter shapes once, before optimization.
    pub fn validate(&self, params: &ModelParameters) -> Result<()> {
        let d = self.dataset;
        if d.n_individuals() == 0 || d.n_periods() == 0 {
            return Err(Error::Data("panel must have N >= 1 and T >= 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("quantile grid is empty".into()));
        }
        self.penalties.validate()?;
        d.require_complete()?;
        params.check(self.kind, d.q(), d.p(), d.n_individuals())
    }

    fn individual_terms(
        &self,
        params: &ModelParameters,
        eps: f64,
        i: usize,
        with_grad: bool,
    ) -> IndividualTerms {
        let d = self.dataset;
        let kind = self.kind;
        let mut grad = with_grad.then(|| params.zeros_like());
        let mut workspace = params.network.as_ref().map(|n| network::Workspace::new(&n.spec));
        let mut loss = 0.0;
        for t in 0..d.n_periods() {
            let z = d.z(i, t);
            let x = d.x(i, t);
            let mut pred = 0.0;
            if kind.has_linear() {
                pred += z.dot(&params.beta);
            }
            if let (Some(net), Some(ws)) = (&params.network, workspace.as_mut()) {
                pred += ws.forward(&net.params, &net.spec, x);
            }
            if kind.has_fixed_effects() {
                pred += params.alpha[i];
            }
            let u = d.y(i, t) - pred;
            let mut obs_deriv = 0.0;
            for (tau, w) in self.grid.iter() {
                loss += w * smoothed_pinball_unchecked(u, tau, eps);
                if with_grad {
                    obs_deriv += w * smoothed_pinball_deriv_unchecked(u, tau, eps);
                }
            }
            if let Some(g) = grad.as_mut() {
                // d loss / d prediction = -ρ'(u)
                let dpred = -obs_deriv;
                if kind.has_linear() {
                    g.beta.scaled_add(dpred, &z);
                }
                if kind.has_fixed_effects() {
                    g.alpha[i] += dpred;
                }
                if let (Some(net), Some(ws), Some(gnet)) =
                    (&params.network, workspace.as_mut(), g.network.as_mut())
                {
                    ws.backward(&net.params, &net.spec, dpred, &mut gnet.params);
                }
            }
        }
        IndividualTerms { loss, grad }
    }

    fn evaluate(
        &self,
        params: &ModelParameters,
        epsilon: SmoothingThreshold,
        with_grad: bool,
    ) -> Result<(ObjectiveParts, Option<ModelParameters>)> {
        let normalized;
        let params = match params.network.as_ref().and_then(|n| n.params.standard_layout()) {
            Some(standard) => {
                let mut p = params.clone();
                p.network.as_mut().expect("network present").params = standard;
                normalized = p;
                &normalized
            }
            None => params,
        };
        let eps = epsilon.value();
        let d = self.dataset;
        let n = d.n_individuals();
        let scale = 1.0 / (self.grid.len() * n * d.n_periods()) as f64;
        let terms = map_indexed(self.execution, n, |i| {
            self.individual_terms(params, eps, i, with_grad)
        });

        // Fixed-order reduction keeps results independent of the execution policy.
        let mut loss = 0.0;
        let mut grad = with_grad.then(|| params.zeros_like());
        for term in terms {
            loss += term.loss;
            if let (Some(g), Some(tg)) = (grad.as_mut(), term.grad) {
                g.beta += &tg.beta;
                g.alpha += &tg.alpha;
                if let (Some(gn), Some(tn)) = (g.network.as_mut(), tg.network) {
                    for (a, b) in gn.params.weights.iter_mut().zip(&tn.params.weights) {
                        *a += b;
                    }
                    for (a, b) in gn.params.biases.iter_mut().zip(&tn.params.biases) {
                        *a += b;
                    }
                }
            }
        }
        let data_loss = loss * scale;

        let mut alpha_penalty = 0.0;
        if self.kind.has_fixed_effects() && self.penalties.lambda1 > 0.0 {
            let c = self.penalties.lambda1 / n as f64;
            alpha_penalty = c * params.alpha.iter().map(|&a| huber_unchecked(a, eps)).sum::<f64>();
        }
        let mut weight_penalty = 0.0;
        let mut decay_coef = 0.0;
        if let Some(net) = &params.network {
            let count = net.spec.hidden_weight_count();
            if self.penalties.lambda2 > 0.0 && count > 0 {
                decay_coef = self.penalties.lambda2 / count as f64;
                weight_penalty = decay_coef * net.params.hidden_weight_sq_sum();
            }
        }
        let parts = ObjectiveParts {
            data_loss,
            alpha_penalty,
            weight_penalty,
        };
        if !parts.total().is_finite() {
            return Err(Error::Numeric(format!(
                "objective is not finite ({})",
                parts.total()
            )));
        }

        if let Some(g) = grad.as_mut() {
            g.beta *= scale;
            g.alpha *= scale;
            if self.kind.has_fixed_effects() && self.penalties.lambda1 > 0.0 {
                let c = self.penalties.lambda1 / n as f64;
                for (ga, &a) in g.alpha.iter_mut().zip(&params.alpha) {
                    *ga += c * huber_deriv_unchecked(a, eps);
                }
            }
            if let (Some(gn), Some(net)) = (g.network.as_mut(), &params.network) {
                let hidden = net.spec.depth();
                for (l, (gw, w)) in gn.params.weights.iter_mut().zip(&net.params.weights).enumerate() {
                    *gw *= scale;
                    if l < hidden && decay_coef > 0.0 {
                        gw.scaled_add(2.0 * decay_coef, w);
                    }
                }
                for gb in gn.params.biases.iter_mut() {
                    *gb *= scale;
                }
            }
            if !self.kind.has_fixed_effects() {
                g.alpha.fill(0.0);
            }
        }
        Ok((parts, grad))
    }

    pub fn parts(&self, params: &ModelParameters, epsilon: SmoothingThreshold) -> Result<ObjectiveParts> {
        self.validate(params)?;
        Ok(self.evaluate(params, epsilon, false)?.0)
    }

    pub fn value(&self, params: &ModelParameters, epsilon: SmoothingThreshold) -> Result<f64> {
        Ok(self.parts(params, epsilon)?.total())
    }

    pub fn gradient(&self, params: &ModelParameters, epsilon: SmoothingThreshold) -> Result<ModelParameters> {
        Ok(self.value_and_gradient(params, epsilon)?.1)
    }

    pub fn value_and_gradient(
        &self,
        params: &ModelParameters,
        epsilon: SmoothingThreshold,
    ) -> Result<(f64, ModelParameters)> {
        self.validate(params)?;
        self.value_and_gradient_prevalidated(params, epsilon)
    }

    /// Skips shape validation; callers must have run [`validate`](Self::validate).
    pub(crate) fn value_and_gradient_prevalidated(
        &self,
        params: &ModelParameters,
        epsilon: SmoothingThreshold,
    ) -> Result<(f64, ModelParameters)> {
        let (parts, grad) = self.evaluate(params, epsilon, true)?;
        let grad = grad.expect("gradient requested");
        let finite = grad.to_free_vector(self.kind).iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("gradient is not finite".into()));
        }
        Ok((parts.total(), grad))
    }
}

pub fn objective(
    params: &ModelParameters,
    kind: ModelKind,
    dataset: &PanelDataset,
    grid: &TauGrid,
    penalties: PenaltyConfig,
    epsilon: SmoothingThreshold,
) -> Result<f64> {
    Objective::new(dataset, kind, grid, penalties).value(params, epsilon)
}

pub fn objective_gradient(
    params: &ModelParameters,
    kind: ModelKind,
    dataset: &PanelDataset,
    grid: &TauGrid,
    penalties: PenaltyConfig,
    epsilon: SmoothingThreshold,
) -> Result<ModelParameters> {
    Objective::new(dataset, kind, grid, penalties).gradient(params, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkReport {
    pub alpha_abs_sum: f64,
    pub alpha_abs_max: f64,
    /// Sum of squares of the hidden-layer weights.
    pub weight_sq_sum: f64,
}

pub fn shrink_report(params: &ModelParameters) -> ShrinkReport {
    ShrinkReport {
        alpha_abs_sum: params.alpha.iter().map(|a| a.abs()).sum(),
        alpha_abs_max: params.alpha.iter().fold(0.0, |m, a| m.max(a.abs())),
        weight_sq_sum: params
            .network
            .as_ref()
            .map(|n| n.params.hidden_weight_sq_sum())
            .unwrap_or(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_parameters;
    use crate::paneldata::test_support::small_schema;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eps(v: f64) -> SmoothingThreshold {
        SmoothingThreshold::new(v).unwrap()
    }

    fn panel(y: Array2<f64>, z: Array3<f64>, x: Array3<f64>) -> PanelDataset {
        let (n, t) = y.dim();
        PanelDataset::new(
            small_schema(z.dim().2, x.dim().2),
            (0..n).map(|i| format!("u{i}")).collect(),
            (0..t as i64).collect(),
            y,
            z,
            x,
        )
        .unwrap()
    }

    fn random_panel(rng: &mut ChaCha8Rng, n: usize, t: usize, q: usize, p: usize) -> PanelDataset {
        panel(
            Array2::from_shape_simple_fn((n, t), || rng.random_range(-2.0..2.0)),
            Array3::from_shape_simple_fn((n, t, q), || rng.random_range(-1.0..1.0)),
            Array3::from_shape_simple_fn((n, t, p), || rng.random_range(-1.0..1.0)),
        )
    }

    fn identity_network() -> Network {
        Network {
            spec: NetworkSpec::new(1, vec![1]).unwrap(),
            params: NetworkParameters {
                weights: vec![array![[1.0]], array![[1.0]]],
                biases: vec![array![0.0]],
            },
        }
    }

    #[test]
    fn predict_examples() {
        let params = ModelParameters {
            beta: array![1.0, 1.0],
            alpha: array![0.5],
            network: None,
        };
        let v = predict(&params, ModelKind::LinearPanelQr, array![2.0, 3.0].view(), array![].view(), 0).unwrap();
        assert_eq!(v, 5.5);

        let spec = NetworkSpec::new(3, vec![2]).unwrap();
        let q = ModelParameters::zeros(ModelKind::Qrnn, 2, 4, Some(&spec)).unwrap();
        let v = predict(&q, ModelKind::Qrnn, array![7.0, 8.0].view(), array![1.0, 2.0, 3.0].view(), 2).unwrap();
        assert_eq!(v, 0.0);

        let p = ModelParameters {
            beta: array![0.0],
            alpha: array![1.0],
            network: Some(identity_network()),
        };
        let v = predict(&p, ModelKind::Psqrnn, array![4.0].view(), array![2.0].view(), 0).unwrap();
        assert_eq!(v, 3.0);

        assert!(matches!(
            predict(&p, ModelKind::Psqrnn, array![4.0].view(), array![2.0].view(), 1),
            Err(Error::Lookup(_))
        ));
        assert!(matches!(
            predict(&p, ModelKind::Psqrnn, array![4.0, 1.0].view(), array![2.0].view(), 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn objective_examples() {
        // One cell, Y = 1, zero parameters, τ = 0.5, ε = 0.25: 0.5·(1 − 0.125).
        let d = panel(array![[1.0]], Array3::zeros((1, 1, 0)), Array3::zeros((1, 1, 0)));
        let grid = TauGrid::single(0.5).unwrap();
        let params = ModelParameters::zeros(ModelKind::LinearPanelQr, 0, 1, None).unwrap();
        let v = objective(&params, ModelKind::LinearPanelQr, &d, &grid, PenaltyConfig::none(), eps(0.25)).unwrap();
        assert_abs_diff_eq!(v, 0.4375, epsilon = 1e-15);

        // Zero residuals with α = (1, −1), λ₁ = 2, ε = 0.5: 2·(0.75 + 0.75)/2.
        let d = panel(array![[1.0], [-1.0]], Array3::zeros((2, 1, 0)), Array3::zeros((2, 1, 0)));
        let params = ModelParameters {
            beta: array![],
            alpha: array![1.0, -1.0],
            network: None,
        };
        let v = objective(&params, ModelKind::LinearPanelQr, &d, &grid, PenaltyConfig::new(2.0, 0.0).unwrap(), eps(0.5)).unwrap();
        assert_abs_diff_eq!(v, 1.5, epsilon = 1e-15);

        // Zero residuals, one hidden weight equal to 2 (N_L = 1), λ₂ = 3.
        let d = panel(array![[0.0]], Array3::zeros((1, 1, 0)), Array3::zeros((1, 1, 1)));
        let mut net = identity_network();
        net.params.weights[0][[0, 0]] = 2.0;
        net.params.weights[1][[0, 0]] = 0.0;
        let params = ModelParameters {
            beta: array![],
            alpha: array![0.0],
            network: Some(net),
        };
        let v = objective(&params, ModelKind::Psqrnn, &d, &grid, PenaltyConfig::new(0.0, 3.0).unwrap(), eps(0.5)).unwrap();
        assert_abs_diff_eq!(v, 12.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_examples() {
        // Residual deep in the positive linear branch: dα = −τ/(KNT).
        let d = panel(array![[5.0]], Array3::zeros((1, 1, 0)), Array3::zeros((1, 1, 0)));
        let grid = TauGrid::single(0.5).unwrap();
        let params = ModelParameters::zeros(ModelKind::LinearPanelQr, 0, 1, None).unwrap();
        let g = objective_gradient(&params, ModelKind::LinearPanelQr, &d, &grid, PenaltyConfig::none(), eps(0.1)).unwrap();
        assert_abs_diff_eq!(g.alpha[0], -0.5, epsilon = 1e-15);

        // Symmetric residuals ±c around a shared α cancel at τ = 0.5.
        let d = panel(array![[2.0, -2.0]], Array3::zeros((1, 2, 0)), Array3::zeros((1, 2, 0)));
        let g = objective_gradient(&params, ModelKind::LinearPanelQr, &d, &grid, PenaltyConfig::none(), eps(0.1)).unwrap();
        assert_eq!(g.alpha[0], 0.0);
    }

    #[test]
    fn missing_cells_and_bad_shapes_rejected() {
        let d = panel(array![[f64::NAN]], Array3::zeros((1, 1, 0)), Array3::zeros((1, 1, 0)));
        let grid = TauGrid::single(0.5).unwrap();
        let params = ModelParameters::zeros(ModelKind::LinearPanelQr, 0, 1, None).unwrap();
        assert!(matches!(
            objective(&params, ModelKind::LinearPanelQr, &d, &grid, PenaltyConfig::none(), eps(0.1)),
            Err(Error::Data(_))
        ));
        let d = panel(array![[1.0]], Array3::zeros((1, 1, 1)), Array3::zeros((1, 1, 0)));
        assert!(matches!(
            objective(&params, ModelKind::LinearPanelQr, &d, &grid, PenaltyConfig::none(), eps(0.1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_data_surfaces_numeric_error() {
        let d = panel(array![[1e308]], Array3::from_elem((1, 1, 1), 1e308), Array3::zeros((1, 1, 0)));
        let grid = TauGrid::single(0.5).unwrap();
        let params = ModelParameters {
            beta: array![-1e308],
            alpha: array![0.0],
            network: None,
        };
        assert!(matches!(
            objective(&params, ModelKind::LinearPanelQr, &d, &grid, PenaltyConfig::none(), eps(0.1)),
            Err(Error::Numeric(_))
        ));
    }

    fn random_params(rng: &mut ChaCha8Rng, kind: ModelKind, q: usize, n: usize, spec: &NetworkSpec, seed: u64) -> ModelParameters {
        let mut params = ModelParameters::zeros(kind, q, n, Some(spec)).unwrap();
        params.beta.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        if kind.has_fixed_effects() {
            params.alpha.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        if let Some(net) = params.network.as_mut() {
            net.params = init_parameters(spec, seed);
            for b in &mut net.params.biases {
                b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            }
        }
        params
    }

    fn fd_check(obj: &Objective, params: &ModelParameters, e: SmoothingThreshold) -> f64 {
        let kind = obj.kind;
        let (_, g) = obj.value_and_gradient(params, e).unwrap();
        let analytic = g.to_free_vector(kind);
        let x0 = params.to_free_vector(kind);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..x0.len() {
            let mut up = x0.clone();
            up[j] += h;
            let mut dn = x0.clone();
            dn[j] -= h;
            let fu = obj.value(&params.with_free_vector(kind, &up).unwrap(), e).unwrap();
            let fdn = obj.value(&params.with_free_vector(kind, &dn).unwrap(), e).unwrap();
            let fd = (fu - fdn) / (2.0 * h);
            let rel = (fd - analytic[j]).abs() / analytic[j].abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences_for_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let spec = NetworkSpec::new(2, vec![3, 2]).unwrap();
        let grid = TauGrid::uniform(vec![0.2, 0.5, 0.7]).unwrap();
        // ε large relative to residual spacing keeps kinks rare for the FD check.
        for (k, kind) in [ModelKind::Psqrnn, ModelKind::LinearPanelQr, ModelKind::Qrnn].into_iter().enumerate() {
            let d = random_panel(&mut rng, 3, 4, 2, 2);
            let params = random_params(&mut rng, kind, 2, 3, &spec, k as u64);
            let obj = Objective::new(&d, kind, &grid, PenaltyConfig::new(0.3, 0.7).unwrap());
            let worst = fd_check(&obj, &params, eps(0.8));
            assert!(worst <= 1e-5, "{kind}: worst relative error {worst}");
        }
    }

    #[test]
    fn qrnn_fixed_effects_have_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = NetworkSpec::new(2, vec![3]).unwrap();
        let d = random_panel(&mut rng, 2, 3, 1, 2);
        let grid = TauGrid::single(0.5).unwrap();
        let params = random_params(&mut rng, ModelKind::Qrnn, 1, 2, &spec, 4);
        let g = objective_gradient(&params, ModelKind::Qrnn, &d, &grid, PenaltyConfig::new(1.0, 1.0).unwrap(), eps(0.1)).unwrap();
        assert!(g.alpha.iter().all(|&v| v == 0.0));
        assert_eq!(g.beta.len(), 0);
    }

    #[test]
    fn execution_policy_does_not_change_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = NetworkSpec::new(2, vec![4, 3]).unwrap();
        let d = random_panel(&mut rng, 7, 5, 2, 2);
        let grid = TauGrid::interior(5).unwrap();
        let params = random_params(&mut rng, ModelKind::Psqrnn, 2, 7, &spec, 3);
        let base = Objective::new(&d, ModelKind::Psqrnn, &grid, PenaltyConfig::default());
        let (a, ga) = base.with_execution(Execution::Sequential).value_and_gradient(&params, eps(0.01)).unwrap();
        let (b, gb) = base.with_execution(Execution::Parallel).value_and_gradient(&params, eps(0.01)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn free_vector_round_trip_and_order() {
        let spec = NetworkSpec::new(1, vec![1]).unwrap();
        let p = ModelParameters {
            beta: array![1.0, 2.0],
            alpha: array![3.0],
            network: Some(Network { spec: spec.clone(), params: identity_network().params }),
        };
        assert_eq!(p.to_free_vector(ModelKind::Psqrnn), vec![1.0, 2.0, 3.0, 1.0, 0.0, 1.0]);
        let v = vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0];
        let back = p.with_free_vector(ModelKind::Psqrnn, &v).unwrap();
        assert_eq!(back.to_free_vector(ModelKind::Psqrnn), v);
        assert!(p.with_free_vector(ModelKind::Psqrnn, &v[..5]).is_err());
    }

    #[test]
    fn shrink_report_examples() {
        let mut p = ModelParameters::zeros(ModelKind::LinearPanelQr, 0, 2, None).unwrap();
        p.alpha = array![1.0, -1.0];
        let r = shrink_report(&p);
        assert_eq!((r.alpha_abs_sum, r.alpha_abs_max, r.weight_sq_sum), (2.0, 1.0, 0.0));
        p.alpha = array![0.0, 0.0];
        assert_eq!(shrink_report(&p).alpha_abs_sum, 0.0);
        p.alpha = array![0.5, 0.5, -2.0];
        let r = shrink_report(&p);
        assert_eq!((r.alpha_abs_sum, r.alpha_abs_max), (3.0, 2.0));
    }

    #[test]
    fn permuting_individuals_preserves_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = NetworkSpec::new(2, vec![3]).unwrap();
        let d = random_panel(&mut rng, 3, 4, 1, 2);
        let params = random_params(&mut rng, ModelKind::Psqrnn, 1, 3, &spec, 2);
        let perm = [2usize, 0, 1];
        let y = Array2::from_shape_fn((3, 4), |(i, t)| d.y(perm[i], t));
        let z = Array3::from_shape_fn((3, 4, 1), |(i, t, j)| d.parametric()[[perm[i], t, j]]);
        let x = Array3::from_shape_fn((3, 4, 2), |(i, t, j)| d.network()[[perm[i], t, j]]);
        let dp = panel(y, z, x);
        let mut pp = params.clone();
        pp.alpha = Array1::from_shape_fn(3, |i| params.alpha[perm[i]]);
        let grid = TauGrid::single(0.4).unwrap();
        let pen = PenaltyConfig::new(0.5, 0.1).unwrap();
        let a = objective(&params, ModelKind::Psqrnn, &d, &grid, pen, eps(0.05)).unwrap();
        let b = objective(&pp, ModelKind::Psqrnn, &dp, &grid, pen, eps(0.05)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn linear_objective_is_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_panel(&mut rng, 3, 5, 2, 0);
        let grid = TauGrid::uniform(vec![0.25, 0.75]).unwrap();
        let obj = Objective::new(&d, ModelKind::LinearPanelQr, &grid, PenaltyConfig::new(0.4, 0.0).unwrap());
        let template = ModelParameters::zeros(ModelKind::LinearPanelQr, 2, 3, None).unwrap();
        for _ in 0..200 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let f = |v: &[f64]| obj.value(&template.with_free_vector(ModelKind::LinearPanelQr, v).unwrap(), eps(0.2)).unwrap();
            assert!(f(&m) <= 0.5 * (f(&a) + f(&b)) + 1e-12);
        }
    }

    #[test]
    fn objective_zero_iff_perfect_fit_and_no_penalty() {
        let d = panel(array![[1.0, 2.0]], Array3::from_shape_vec((1, 2, 1), vec![1.0, 2.0]).unwrap(), Array3::zeros((1, 2, 0)));
        let grid = TauGrid::single(0.5).unwrap();
        let params = ModelParameters { beta: array![1.0], alpha: array![0.0], network: None };
        let pen = PenaltyConfig::new(1.0, 1.0).unwrap();
        assert_eq!(objective(&params, ModelKind::LinearPanelQr, &d, &grid, pen, eps(0.1)).unwrap(), 0.0);
        let shifted = ModelParameters { beta: array![1.0], alpha: array![0.01], network: None };
        assert!(objective(&shifted, ModelKind::LinearPanelQr, &d, &grid, pen, eps(0.1)).unwrap() > 0.0);
    }
}
