//! End-to-end workflow shared by the library and the command-line tool:
//! impute, split by scenario, standardize on the training side, fit, and
//! forecast the test side in original units.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::TauGrid;
use crate::metrics::{report, ForecastReport};
use crate::model::{predict, ModelKind, PenaltyConfig};
use crate::network::{Activation, NetworkSpec};
use crate::paneldata::{impute_mean, scenario_split, PanelDataset, PanelSchema, Scenario, Side, StandardizationState};
use crate::selection::{grid_search, SearchGrid, SearchRow};
use crate::trainer::{fit, fit_per_tau, FitResult, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub kind: ModelKind,
    pub scenario: Scenario,
    pub grid: TauGrid,
    /// Fit one model per τ instead of one composite model for the whole grid.
    pub per_tau: bool,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub penalties: PenaltyConfig,
    pub train: TrainConfig,
    pub standardize: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.penalties.validate()?;
        self.train.validate()?;
        if self.kind.has_network() && (self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0)) {
            return Err(Error::Config("hidden sizes must be nonempty and at least 1 each".into()));
        }
        Ok(())
    }

    fn spec_for(&self, input_dim: usize) -> Result<Option<NetworkSpec>> {
        if !self.kind.has_network() {
            return Ok(None);
        }
        Ok(Some(NetworkSpec::new(input_dim, self.hidden_sizes.clone())?.with_activation(self.activation)))
    }
}

/// One fitted quantile model; `tau` is `None` for a composite fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: Option<f64>,
    pub fit: FitResult,
}

impl QuantileFit {
    pub fn label(&self) -> String {
        match self.tau {
            Some(tau) => format!("tau_{tau}"),
            None => "composite".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: PipelineConfig,
    /// Schema of the materialized regression panel (lagged response included).
    pub schema: PanelSchema,
    pub individuals: Vec<String>,
    pub network: Option<NetworkSpec>,
    pub standardization: Option<StandardizationState>,
    pub fits: Vec<QuantileFit>,
}

/// Test-side forecasts in original units; one `N × H` matrix per fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub individuals: Vec<String>,
    pub periods: Vec<i64>,
    pub labels: Vec<String>,
    pub predictions: Vec<Array2<f64>>,
    /// Observed responses, absent when any target lies beyond the panel.
    pub actuals: Option<Array2<f64>>,
}

impl Forecast {
    /// Metrics for the first fitted model when actuals are known.
    pub fn report(&self) -> Result<ForecastReport> {
        let first = self.predictions.first().ok_or_else(|| Error::Shape("forecast has no predictions".into()))?;
        match &self.actuals {
            Some(actuals) => report(actuals.view(), first.view()),
            None => Ok(ForecastReport::predictions_only(first.clone())),
        }
    }
}

fn prepare(dataset: &PanelDataset) -> Result<PanelDataset> {
    if dataset.has_missing() {
        impute_mean(dataset)
    } else {
        Ok(dataset.clone())
    }
}

/// Training-side regression panel, standardized when configured.
fn training_panel(dataset: &PanelDataset, config: &PipelineConfig) -> Result<(PanelDataset, Option<StandardizationState>)> {
    config.validate()?;
    let complete = prepare(dataset)?;
    let split = scenario_split(&complete, config.scenario)?;
    let panel = split.materialize(&complete, Side::Train)?;
    if config.standardize {
        let state = StandardizationState::fit_all(&panel)?;
        Ok((state.apply(&panel)?, Some(state)))
    } else {
        Ok((panel, None))
    }
}

pub fn train(dataset: &PanelDataset, config: &PipelineConfig) -> Result<TrainedModel> {
    let (panel, standardization) = training_panel(dataset, config)?;
    let network = config.spec_for(panel.p())?;
    let fits = if config.per_tau {
        let fits = fit_per_tau(&panel, config.kind, config.grid.taus(), config.penalties, network.as_ref(), &config.train)?;
        config
            .grid
            .taus()
            .iter()
            .zip(fits)
            .map(|(&tau, fit)| QuantileFit { tau: Some(tau), fit })
            .collect()
    } else {
        vec![QuantileFit {
            tau: None,
            fit: fit(&panel, config.kind, &config.grid, config.penalties, network.as_ref(), &config.train)?,
        }]
    };
    Ok(TrainedModel {
        config: config.clone(),
        schema: panel.schema().clone(),
        individuals: panel.individuals().to_vec(),
        network,
        standardization,
        fits,
    })
}

/// Selects hidden sizes and penalties by BIC on the training side. The
/// returned model carries the selected point in its config.
pub fn search(
    dataset: &PanelDataset,
    config: &PipelineConfig,
    grid: &SearchGrid,
) -> Result<(TrainedModel, Vec<SearchRow>)> {
    if config.per_tau {
        return Err(Error::Config("grid search selects one composite model; per-τ fitting is not supported".into()));
    }
    let (panel, standardization) = training_panel(dataset, config)?;
    let template = config
        .spec_for(panel.p())?
        .ok_or_else(|| Error::Config(format!("grid search needs a network model (got '{}')", config.kind)))?;
    let outcome = grid_search(&panel, config.kind, &config.grid, grid, &template, &config.train)?;
    let mut selected = config.clone();
    selected.hidden_sizes = outcome.best.hidden_sizes();
    selected.penalties = outcome.best.penalties();
    let model = TrainedModel {
        network: selected.spec_for(panel.p())?,
        config: selected,
        schema: panel.schema().clone(),
        individuals: panel.individuals().to_vec(),
        standardization,
        fits: vec![QuantileFit { tau: None, fit: outcome.best_fit }],
    };
    Ok((model, outcome.table))
}

impl TrainedModel {
    /// Predictions in original units for every cell of a materialized
    /// regression panel, one matrix per fitted model.
    pub fn predict_panel(&self, panel: &PanelDataset) -> Result<Vec<Array2<f64>>> {
        if panel.individuals() != self.individuals.as_slice() {
            let unknown: Vec<&str> = panel
                .individuals()
                .iter()
                .filter(|id| !self.individuals.contains(id))
                .map(String::as_str)
                .collect();
            return Err(Error::Lookup(if unknown.is_empty() {
                "panel individuals differ in order or count from the trained model".into()
            } else {
                format!("individuals not seen in training: {}", unknown.join(", "))
            }));
        }
        if panel.q() != self.schema.parametric.len() || panel.p() != self.schema.network.len() {
            return Err(Error::Shape(format!(
                "panel has q={}, p={}; model was trained with q={}, p={}",
                panel.q(),
                panel.p(),
                self.schema.parametric.len(),
                self.schema.network.len()
            )));
        }
        let scaled = match &self.standardization {
            Some(state) => state.apply(panel)?,
            None => panel.clone(),
        };
        let (n, t) = (scaled.n_individuals(), scaled.n_periods());
        self.fits
            .iter()
            .map(|qf| {
                let mut out = Array2::zeros((n, t));
                for i in 0..n {
                    for s in 0..t {
                        let v = predict(&qf.fit.params, self.config.kind, scaled.z(i, s), scaled.x(i, s), i)?;
                        out[[i, s]] = match &self.standardization {
                            Some(state) => state.response.inverse(v),
                            None => v,
                        };
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// Forecasts the test side of the model's scenario on `dataset`.
    pub fn forecast(&self, dataset: &PanelDataset) -> Result<Forecast> {
        let complete = prepare(dataset)?;
        let split = scenario_split(&complete, self.config.scenario)?;
        let panel = split.materialize(&complete, Side::Test)?;
        let predictions = self.predict_panel(&panel)?;
        let response = panel.response();
        let actuals = response.iter().all(|v| v.is_finite()).then(|| response.to_owned());
        Ok(Forecast {
            individuals: panel.individuals().to_vec(),
            periods: panel.periods().to_vec(),
            labels: self.fits.iter().map(QuantileFit::label).collect(),
            predictions,
            actuals,
        })
    }

    /// Linear coefficients of the first fit in original units.
    pub fn beta_original(&self) -> Vec<f64> {
        let beta = self.fits[0].fit.params.beta.to_vec();
        match &self.standardization {
            Some(state) => state.beta_to_original(&beta),
            None => beta,
        }
    }
}
