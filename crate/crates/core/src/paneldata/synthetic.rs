//! Synthetic panels with known ground truth:
//! `Y_it = Z_itᵀβ + g(X_it) + α_i + σ·e_it`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use super::{PanelDataset, PanelSchema};
use crate::error::{Error, Result};

const DEFAULT_BETA: [f64; 6] = [1.0, -0.5, 0.75, 0.25, -1.0, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseLaw {
    Normal,
    StudentT { df: f64 },
}

impl fmt::Display for NoiseLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseLaw::Normal => f.write_str("normal"),
            NoiseLaw::StudentT { df } => write!(f, "t{df}"),
        }
    }
}

impl FromStr for NoiseLaw {
    type Err = Error;
    /// `normal`, or `t<df>` such as `t3`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "normal" || s == "gaussian" {
            return Ok(NoiseLaw::Normal);
        }
        if let Some(df) = s.strip_prefix('t') {
            if let Ok(df) = df.parse::<f64>() {
                if df > 0.0 {
                    return Ok(NoiseLaw::StudentT { df });
                }
            }
        }
        Err(Error::Config(format!("unknown noise law '{s}' (use normal or t<df>)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    None,
    /// `a·sin(2·x₁)`
    Sine,
    /// `a·(x₁² − 1)`
    Quadratic,
    /// `a·x₁·x₂`
    Interaction,
}

impl Nonlinearity {
    pub fn evaluate(self, amplitude: f64, x: ArrayView1<f64>) -> f64 {
        match self {
            Nonlinearity::None => 0.0,
            Nonlinearity::Sine => amplitude * (2.0 * x[0]).sin(),
            Nonlinearity::Quadratic => amplitude * (x[0] * x[0] - 1.0),
            Nonlinearity::Interaction => amplitude * x[0] * x[1],
        }
    }

    pub fn describe(self, amplitude: f64) -> String {
        match self {
            Nonlinearity::None => "g(x) = 0".into(),
            Nonlinearity::Sine => format!("g(x) = {amplitude} * sin(2 * x1)"),
            Nonlinearity::Quadratic => format!("g(x) = {amplitude} * (x1^2 - 1)"),
            Nonlinearity::Interaction => format!("g(x) = {amplitude} * x1 * x2"),
        }
    }

    fn min_inputs(self) -> usize {
        match self {
            Nonlinearity::None => 0,
            Nonlinearity::Sine | Nonlinearity::Quadratic => 1,
            Nonlinearity::Interaction => 2,
        }
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(Nonlinearity::None),
            "sine" => Ok(Nonlinearity::Sine),
            "quadratic" => Ok(Nonlinearity::Quadratic),
            "interaction" => Ok(Nonlinearity::Interaction),
            other => Err(Error::Config(format!("unknown nonlinear component '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_individuals: usize,
    pub n_periods: usize,
    pub first_period: i64,
    /// Parametric covariate count `q`.
    pub n_parametric: usize,
    /// Network covariate count `p`.
    pub n_network: usize,
    /// Linear coefficients; defaults to a fixed prefix of length `q`.
    pub beta: Option<Vec<f64>>,
    pub nonlinearity: Nonlinearity,
    pub amplitude: f64,
    pub noise: NoiseLaw,
    pub noise_scale: f64,
    /// Center and spread of the fixed effects `α_i ~ mean + scale·N(0, 1)`.
    pub alpha_mean: f64,
    pub alpha_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_individuals: 30,
            n_periods: 20,
            first_period: 1999,
            n_parametric: 2,
            n_network: 2,
            beta: None,
            nonlinearity: Nonlinearity::Sine,
            amplitude: 1.5,
            noise: NoiseLaw::StudentT { df: 3.0 },
            noise_scale: 0.25,
            alpha_mean: 10.0,
            alpha_scale: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn beta(&self) -> Vec<f64> {
        self.beta.clone().unwrap_or_else(|| {
            (0..self.n_parametric)
                .map(|j| DEFAULT_BETA[j % DEFAULT_BETA.len()])
                .collect()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_individuals == 0 || self.n_periods == 0 {
            return Err(Error::Config("synthetic panel needs N >= 1 and T >= 1".into()));
        }
        if self.beta().len() != self.n_parametric {
            return Err(Error::Config(format!(
                "beta has {} entries but q = {}",
                self.beta().len(),
                self.n_parametric
            )));
        }
        if self.n_network < self.nonlinearity.min_inputs() {
            return Err(Error::Config(format!(
                "nonlinear component {:?} needs at least {} network covariates",
                self.nonlinearity,
                self.nonlinearity.min_inputs()
            )));
        }
        if !(self.noise_scale >= 0.0) || !(self.alpha_scale >= 0.0) {
            return Err(Error::Config("noise and heterogeneity scales must be nonnegative".into()));
        }
        if let NoiseLaw::StudentT { df } = self.noise {
            if !(df > 0.0) {
                return Err(Error::Config("Student-t degrees of freedom must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> PanelSchema {
        PanelSchema {
            id: "individual".into(),
            period: "year".into(),
            response: "y".into(),
            parametric: (1..=self.n_parametric).map(|j| format!("z{j}")).collect(),
            network: (1..=self.n_network).map(|j| format!("x{j}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub nonlinearity: Nonlinearity,
    pub amplitude: f64,
    pub nonlinear_form: String,
    pub noise: NoiseLaw,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub dataset: PanelDataset,
    pub truth: GroundTruth,
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticPanel> {
    config.validate()?;
    let (n, t, q, p) = (
        config.n_individuals,
        config.n_periods,
        config.n_parametric,
        config.n_network,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let beta = config.beta();
    let alpha: Vec<f64> = (0..n)
        .map(|_| config.alpha_mean + config.alpha_scale * std_normal.sample(&mut rng))
        .collect();
    let parametric = Array3::from_shape_simple_fn((n, t, q), || std_normal.sample(&mut rng));
    let network = Array3::from_shape_simple_fn((n, t, p), || std_normal.sample(&mut rng));
    let student = match config.noise {
        NoiseLaw::StudentT { df } => Some(
            StudentT::new(df).map_err(|e| Error::Config(format!("invalid Student-t: {e}")))?,
        ),
        NoiseLaw::Normal => None,
    };
    let mut response = Array2::zeros((n, t));
    for i in 0..n {
        for s in 0..t {
            let z = parametric.slice(ndarray::s![i, s, ..]);
            let x = network.slice(ndarray::s![i, s, ..]);
            let linear: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let e = match &student {
                Some(d) => d.sample(&mut rng),
                None => std_normal.sample(&mut rng),
            };
            let noise = if config.noise_scale == 0.0 { 0.0 } else { config.noise_scale * e };
            response[[i, s]] =
                linear + config.nonlinearity.evaluate(config.amplitude, x) + alpha[i] + noise;
        }
    }
    let width = n.to_string().len().max(2);
    let individuals = (1..=n).map(|i| format!("unit{i:0width$}")).collect();
    let periods = (0..t as i64).map(|s| config.first_period + s).collect();
    let dataset = PanelDataset::new(
        config.schema(),
        individuals,
        periods,
        response,
        parametric,
        network,
    )?;
    Ok(SyntheticPanel {
        dataset,
        truth: GroundTruth {
            beta,
            alpha,
            nonlinearity: config.nonlinearity,
            amplitude: config.amplitude,
            nonlinear_form: config.nonlinearity.describe(config.amplitude),
            noise: config.noise,
            noise_scale: config.noise_scale,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_linear_panel_is_exact() {
        let cfg = SyntheticConfig {
            nonlinearity: Nonlinearity::None,
            noise_scale: 0.0,
            alpha_mean: 0.0,
            alpha_scale: 0.0,
            ..SyntheticConfig::default()
        };
        let sp = generate_synthetic(&cfg, 3).unwrap();
        let d = &sp.dataset;
        for i in 0..d.n_individuals() {
            for s in 0..d.n_periods() {
                let expect: f64 = d.z(i, s).iter().zip(&sp.truth.beta).map(|(a, b)| a * b).sum();
                assert_eq!(d.y(i, s), expect);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig::default();
        assert_eq!(generate_synthetic(&cfg, 9).unwrap(), generate_synthetic(&cfg, 9).unwrap());
        assert_ne!(
            generate_synthetic(&cfg, 9).unwrap().dataset,
            generate_synthetic(&cfg, 10).unwrap().dataset
        );
    }

    #[test]
    fn default_shape_is_thirty_by_twenty() {
        let d = generate_synthetic(&SyntheticConfig::default(), 0).unwrap().dataset;
        assert_eq!((d.n_individuals(), d.n_periods()), (30, 20));
        assert_eq!(d.periods()[0], 1999);
        assert_eq!(d.periods()[19], 2018);
        assert_eq!(d.individuals()[0], "unit01");
        assert!(d.response().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn invalid_dims_rejected() {
        let cfg = SyntheticConfig { n_individuals: 0, ..SyntheticConfig::default() };
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
        let cfg = SyntheticConfig {
            n_network: 1,
            nonlinearity: Nonlinearity::Interaction,
            ..SyntheticConfig::default()
        };
        assert!(generate_synthetic(&cfg, 0).is_err());
        let cfg = SyntheticConfig { beta: Some(vec![1.0]), ..SyntheticConfig::default() };
        assert!(generate_synthetic(&cfg, 0).is_err());
    }

    #[test]
    fn noise_law_parsing() {
        assert_eq!("t3".parse::<NoiseLaw>().unwrap(), NoiseLaw::StudentT { df: 3.0 });
        assert_eq!("normal".parse::<NoiseLaw>().unwrap(), NoiseLaw::Normal);
        assert!("cauchy".parse::<NoiseLaw>().is_err());
    }
}
