use ndarray::Axis;
use serde::{Deserialize, Serialize};

use super::PanelDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub sd: f64,
}

impl ColumnScale {
    fn fit(name: &str, values: &[f64]) -> Result<Self> {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::Data(format!(
                "column '{name}' has zero variance on the training rows"
            )));
        }
        Ok(Self { mean, sd })
    }

    #[inline]
    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    #[inline]
    pub fn inverse(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Z-score parameters estimated on training cells (population denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationState {
    pub response: ColumnScale,
    pub parametric: Vec<ColumnScale>,
    pub network: Vec<ColumnScale>,
}

impl StandardizationState {
    /// Estimates scales from the `(individual, period)` cells in `cells`.
    pub fn fit(dataset: &PanelDataset, cells: &[(usize, usize)]) -> Result<Self> {
        dataset.require_complete()?;
        if cells.is_empty() {
            return Err(Error::Data("standardization needs at least one training cell".into()));
        }
        let (n, t) = (dataset.n_individuals(), dataset.n_periods());
        if let Some(&(i, s)) = cells.iter().find(|&&(i, s)| i >= n || s >= t) {
            return Err(Error::Lookup(format!("training cell ({i}, {s}) outside the panel")));
        }
        let schema = dataset.schema();
        let ys: Vec<f64> = cells.iter().map(|&(i, s)| dataset.y(i, s)).collect();
        let response = ColumnScale::fit(&schema.response, &ys)?;
        let parametric = (0..dataset.q())
            .map(|j| {
                let v: Vec<f64> = cells.iter().map(|&(i, s)| dataset.parametric()[[i, s, j]]).collect();
                ColumnScale::fit(&schema.parametric[j], &v)
            })
            .collect::<Result<_>>()?;
        let network = (0..dataset.p())
            .map(|j| {
                let v: Vec<f64> = cells.iter().map(|&(i, s)| dataset.network()[[i, s, j]]).collect();
                ColumnScale::fit(&schema.network[j], &v)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            response,
            parametric,
            network,
        })
    }

    /// Estimates scales from every cell of the dataset.
    pub fn fit_all(dataset: &PanelDataset) -> Result<Self> {
        let cells: Vec<_> = (0..dataset.n_individuals())
            .flat_map(|i| (0..dataset.n_periods()).map(move |s| (i, s)))
            .collect();
        Self::fit(dataset, &cells)
    }

    /// Applies the stored scales to every cell (missing cells stay missing).
    pub fn apply(&self, dataset: &PanelDataset) -> Result<PanelDataset> {
        if self.parametric.len() != dataset.q() || self.network.len() != dataset.p() {
            return Err(Error::Shape(format!(
                "standardization covers q={}, p={}; dataset has q={}, p={}",
                self.parametric.len(),
                self.network.len(),
                dataset.q(),
                dataset.p()
            )));
        }
        let mut out = dataset.clone();
        out.response.mapv_inplace(|v| self.response.forward(v));
        for (j, scale) in self.parametric.iter().enumerate() {
            out.parametric
                .index_axis_mut(Axis(2), j)
                .mapv_inplace(|v| scale.forward(v));
        }
        for (j, scale) in self.network.iter().enumerate() {
            out.network
                .index_axis_mut(Axis(2), j)
                .mapv_inplace(|v| scale.forward(v));
        }
        Ok(out)
    }

    pub fn destandardize_response(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.response.inverse(v)).collect()
    }

    /// Maps linear coefficients fitted on standardized data back to original units.
    pub fn beta_to_original(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter()
            .zip(&self.parametric)
            .map(|(b, s)| b * self.response.sd / s.sd)
            .collect()
    }
}

/// Standardizes every column with statistics from the `train` cells only.
pub fn standardize(
    dataset: &PanelDataset,
    train: &[(usize, usize)],
) -> Result<(PanelDataset, StandardizationState)> {
    let state = StandardizationState::fit(dataset, train)?;
    Ok((state.apply(dataset)?, state))
}

pub fn destandardize_response(values: &[f64], state: &StandardizationState) -> Vec<f64> {
    state.destandardize_response(values)
}
