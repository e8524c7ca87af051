//! Forecast accuracy: MAPE and RRMSE per individual, per period and in total.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "actual has {} values, predicted has {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Shape("metrics need at least one value".into()));
    }
    Ok(())
}

/// `(1/n) Σ |(y − ŷ) / y|`; a zero actual is a domain error.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    if let Some(pos) = actual.iter().position(|&y| y == 0.0) {
        return Err(Error::Domain(format!("actual value at position {pos} is zero")));
    }
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| ((y - p) / y).abs())
        .sum();
    Ok(sum / actual.len() as f64)
}

/// `sqrt(Σ (y − ŷ)²) / sqrt(Σ y²)`; all-zero actuals are a domain error.
pub fn rrmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let denom: f64 = actual.iter().map(|y| y * y).sum();
    if !(denom > 0.0) {
        return Err(Error::Domain("actual values are all zero".into()));
    }
    let num: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(num.sqrt() / denom.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation (denominator = count).
    pub std_dev: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std_dev: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mape_by_individual: Vec<f64>,
    pub rrmse_by_individual: Vec<f64>,
    pub mape_by_period: Vec<f64>,
    pub rrmse_by_period: Vec<f64>,
    pub total_mape: f64,
    pub total_rrmse: f64,
    pub mape_individual_summary: Summary,
    pub rrmse_individual_summary: Summary,
}

/// Predictions (N×H) with metrics when actuals are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub predictions: Array2<f64>,
    pub actuals: Option<Array2<f64>>,
    pub metrics: Option<ForecastMetrics>,
}

impl ForecastReport {
    /// A report for forecasts without ground truth.
    pub fn predictions_only(predictions: Array2<f64>) -> Self {
        Self { predictions, actuals: None, metrics: None }
    }
}

fn rows(a: ArrayView2<f64>) -> Vec<Vec<f64>> {
    a.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
}

fn cols(a: ArrayView2<f64>) -> Vec<Vec<f64>> {
    a.axis_iter(Axis(1)).map(|c| c.to_vec()).collect()
}

pub fn report(actuals: ArrayView2<f64>, predictions: ArrayView2<f64>) -> Result<ForecastReport> {
    if actuals.dim() != predictions.dim() {
        return Err(Error::Shape(format!(
            "actuals have shape {:?}, predictions {:?}",
            actuals.dim(),
            predictions.dim()
        )));
    }
    let by = |a: Vec<Vec<f64>>, p: Vec<Vec<f64>>, f: fn(&[f64], &[f64]) -> Result<f64>| {
        a.iter().zip(&p).map(|(a, p)| f(a, p)).collect::<Result<Vec<f64>>>()
    };
    let mape_by_individual = by(rows(actuals), rows(predictions), mape)?;
    let rrmse_by_individual = by(rows(actuals), rows(predictions), rrmse)?;
    let mape_by_period = by(cols(actuals), cols(predictions), mape)?;
    let rrmse_by_period = by(cols(actuals), cols(predictions), rrmse)?;
    let flat_a: Vec<f64> = actuals.iter().copied().collect();
    let flat_p: Vec<f64> = predictions.iter().copied().collect();
    let metrics = ForecastMetrics {
        total_mape: mape(&flat_a, &flat_p)?,
        total_rrmse: rrmse(&flat_a, &flat_p)?,
        mape_individual_summary: Summary::of(&mape_by_individual),
        rrmse_individual_summary: Summary::of(&rrmse_by_individual),
        mape_by_individual,
        rrmse_by_individual,
        mape_by_period,
        rrmse_by_period,
    };
    Ok(ForecastReport {
        predictions: predictions.to_owned(),
        actuals: Some(actuals.to_owned()),
        metrics: Some(metrics),
    })
}
