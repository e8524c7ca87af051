//! Balanced panel datasets: `N` individuals observed over `T` consecutive
//! periods, with a response, parametric covariates `Z` and network
//! covariates `X`.

mod describe;
mod io;
mod scenario;
mod standardize;
mod synthetic;

pub use describe::{describe, DatasetSummary, VariableSummary, YearMoments};
pub use io::{emit, emit_to_writer, ingest, ingest_from_reader, IngestOptions};
pub use scenario::{scenario_split, Scenario, ScenarioSplit, Side, SplitPair, HORIZON};
pub use standardize::{destandardize_response, standardize, ColumnScale, StandardizationState};
pub use synthetic::{generate_synthetic, GroundTruth, NoiseLaw, Nonlinearity, SyntheticConfig, SyntheticPanel};

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names binding a delimited file to the panel layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub id: String,
    pub period: String,
    pub response: String,
    pub parametric: Vec<String>,
    pub network: Vec<String>,
}

impl PanelSchema {
    /// Provincial electricity-consumption layout: economic factors enter both
    /// parts of the model, climate factors only the network.
    pub fn electricity() -> Self {
        let economic = ["GDP", "VASI", "TRSCG", "TIE"];
        let climate = ["AAT", "AARH", "DP", "SH"];
        Self {
            id: "province".into(),
            period: "year".into(),
            response: "EC".into(),
            parametric: economic.iter().map(|s| s.to_string()).collect(),
            network: economic
                .iter()
                .chain(climate.iter())
                .map(|s| s.to_string())
                .collect(),
        }
    }

    /// Distinct value columns in file order: response, parametric, then
    /// network columns not already listed.
    pub fn value_columns(&self) -> Vec<String> {
        let mut cols = vec![self.response.clone()];
        for c in self.parametric.iter().chain(&self.network) {
            if !cols.contains(c) {
                cols.push(c.clone());
            }
        }
        cols
    }

    /// Name of variable `v` in the `(response, Z..., X...)` ordering used by
    /// the missing mask.
    pub fn variable_name(&self, v: usize) -> &str {
        let q = self.parametric.len();
        if v == 0 {
            &self.response
        } else if v <= q {
            &self.parametric[v - 1]
        } else {
            &self.network[v - 1 - q]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    schema: PanelSchema,
    individuals: Vec<String>,
    periods: Vec<i64>,
    response: Array2<f64>,
    parametric: Array3<f64>,
    network: Array3<f64>,
    missing: Array3<bool>,
}

impl PanelDataset {
    /// Assembles a dataset; NaN cells are treated as missing.
    pub fn new(
        schema: PanelSchema,
        individuals: Vec<String>,
        periods: Vec<i64>,
        response: Array2<f64>,
        parametric: Array3<f64>,
        network: Array3<f64>,
    ) -> Result<Self> {
        let (n, t) = (individuals.len(), periods.len());
        if response.dim() != (n, t) {
            return Err(Error::Shape(format!(
                "response has shape {:?}, expected ({n}, {t})",
                response.dim()
            )));
        }
        let q = schema.parametric.len();
        let p = schema.network.len();
        if parametric.dim() != (n, t, q) {
            return Err(Error::Shape(format!(
                "parametric covariates have shape {:?}, expected ({n}, {t}, {q})",
                parametric.dim()
            )));
        }
        if network.dim() != (n, t, p) {
            return Err(Error::Shape(format!(
                "network covariates have shape {:?}, expected ({n}, {t}, {p})",
                network.dim()
            )));
        }
        if periods.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::Data(
                "periods must be strictly increasing consecutive integers".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for id in &individuals {
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate individual '{id}'")));
            }
        }
        let mut missing = Array3::from_elem((n, t, 1 + q + p), false);
        for i in 0..n {
            for s in 0..t {
                missing[[i, s, 0]] = !response[[i, s]].is_finite();
                for j in 0..q {
                    missing[[i, s, 1 + j]] = !parametric[[i, s, j]].is_finite();
                }
                for j in 0..p {
                    missing[[i, s, 1 + q + j]] = !network[[i, s, j]].is_finite();
                }
            }
        }
        Ok(Self {
            schema,
            individuals,
            periods,
            response,
            parametric,
            network,
            missing,
        })
    }

    pub fn schema(&self) -> &PanelSchema {
        &self.schema
    }

    pub fn individuals(&self) -> &[String] {
        &self.individuals
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn n_individuals(&self) -> usize {
        self.individuals.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    /// Parametric covariate count `q`.
    pub fn q(&self) -> usize {
        self.schema.parametric.len()
    }

    /// Network covariate count `p`.
    pub fn p(&self) -> usize {
        self.schema.network.len()
    }

    pub fn response(&self) -> ArrayView2<'_, f64> {
        self.response.view()
    }

    pub fn parametric(&self) -> &Array3<f64> {
        &self.parametric
    }

    pub fn network(&self) -> &Array3<f64> {
        &self.network
    }

    pub fn missing_mask(&self) -> &Array3<bool> {
        &self.missing
    }

    pub fn z(&self, i: usize, t: usize) -> ArrayView1<'_, f64> {
        self.parametric.slice(ndarray::s![i, t, ..])
    }

    pub fn x(&self, i: usize, t: usize) -> ArrayView1<'_, f64> {
        self.network.slice(ndarray::s![i, t, ..])
    }

    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.response[[i, t]]
    }

    pub fn individual_index(&self, id: &str) -> Option<usize> {
        self.individuals.iter().position(|s| s == id)
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub(crate) fn require_complete(&self) -> Result<()> {
        if let Some(((i, t, v), _)) = self.missing.indexed_iter().find(|(_, &m)| m) {
            return Err(Error::Data(format!(
                "missing value for '{}' at individual '{}', period {}; impute first",
                self.schema.variable_name(v),
                self.individuals[i],
                self.periods[t]
            )));
        }
        Ok(())
    }

    fn variable_count(&self) -> usize {
        1 + self.q() + self.p()
    }

    fn variable_column(&self, v: usize) -> Array2<f64> {
        let q = self.q();
        if v == 0 {
            self.response.clone()
        } else if v <= q {
            self.parametric.index_axis(Axis(2), v - 1).to_owned()
        } else {
            self.network.index_axis(Axis(2), v - 1 - q).to_owned()
        }
    }

    fn set_variable_cell(&mut self, v: usize, i: usize, t: usize, value: f64) {
        let q = self.q();
        if v == 0 {
            self.response[[i, t]] = value;
        } else if v <= q {
            self.parametric[[i, t, v - 1]] = value;
        } else {
            self.network[[i, t, v - 1 - q]] = value;
        }
    }
}

/// Replaces every missing cell with the mean of the same individual's
/// observed values for that variable, falling back to the variable's global
/// observed mean when the individual has none.
pub fn impute_mean(dataset: &PanelDataset) -> Result<PanelDataset> {
    let mut out = dataset.clone();
    if !dataset.has_missing() {
        return Ok(out);
    }
    let (n, t) = (dataset.n_individuals(), dataset.n_periods());
    for v in 0..dataset.variable_count() {
        let col = dataset.variable_column(v);
        let mask = dataset.missing.index_axis(Axis(2), v);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let observed: Vec<f64> = col
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| !m)
            .map(|(&val, _)| val)
            .collect();
        if observed.is_empty() {
            return Err(Error::Data(format!(
                "variable '{}' has no observed values",
                dataset.schema.variable_name(v)
            )));
        }
        let global = mean(&observed);
        for i in 0..n {
            let row: Vec<f64> = (0..t).filter(|&s| !mask[[i, s]]).map(|s| col[[i, s]]).collect();
            let fill = if row.is_empty() { global } else { mean(&row) };
            for s in 0..t {
                if mask[[i, s]] {
                    out.set_variable_cell(v, i, s, fill);
                }
            }
        }
    }
    out.missing.fill(false);
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn small_schema(q: usize, p: usize) -> PanelSchema {
        PanelSchema {
            id: "id".into(),
            period: "year".into(),
            response: "y".into(),
            parametric: (1..=q).map(|j| format!("z{j}")).collect(),
            network: (1..=p).map(|j| format!("x{j}")).collect(),
        }
    }
}
