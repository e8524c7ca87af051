use serde::{Deserialize, Serialize};

use super::PanelDataset;

/// Moment statistics of one variable across individuals in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearMoments {
    pub period: i64,
    pub observed: usize,
    pub mean: f64,
    /// `m3 / m2^{3/2}`; NaN when the variance is zero.
    pub skewness: f64,
    /// Non-excess kurtosis `m4 / m2²` (3 for a normal law).
    pub kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    pub observations: usize,
    pub missing: usize,
    /// Missing share in percent, rounded to two decimals.
    pub missing_percent: f64,
    pub by_period: Vec<YearMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_individuals: usize,
    pub n_periods: usize,
    pub first_period: i64,
    pub last_period: i64,
    pub variables: Vec<VariableSummary>,
}

fn moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let m = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let (m2, m3, m4) = (m(2), m(3), m(4));
    if m2 > 0.0 {
        (mean, m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (mean, f64::NAN, f64::NAN)
    }
}

/// Missing shares and per-period distribution shape for every distinct
/// value column of the raw (unimputed) dataset.
pub fn describe(dataset: &PanelDataset) -> DatasetSummary {
    let schema = dataset.schema();
    let q = dataset.q();
    let (n, t) = (dataset.n_individuals(), dataset.n_periods());
    let mut variables = Vec::new();
    for name in schema.value_columns() {
        // Locate the first slot holding this column in the (y, Z, X) ordering.
        let v = if name == schema.response {
            0
        } else if let Some(j) = schema.parametric.iter().position(|c| *c == name) {
            1 + j
        } else {
            1 + q + schema.network.iter().position(|c| *c == name).unwrap()
        };
        let cell = |i: usize, s: usize| -> Option<f64> {
            if dataset.missing_mask()[[i, s, v]] {
                return None;
            }
            Some(if v == 0 {
                dataset.y(i, s)
            } else if v <= q {
                dataset.parametric()[[i, s, v - 1]]
            } else {
                dataset.network()[[i, s, v - 1 - q]]
            })
        };
        let missing = (0..n)
            .flat_map(|i| (0..t).map(move |s| (i, s)))
            .filter(|&(i, s)| cell(i, s).is_none())
            .count();
        let by_period = (0..t)
            .map(|s| {
                let vals: Vec<f64> = (0..n).filter_map(|i| cell(i, s)).collect();
                let (mean, skewness, kurtosis) = moments(&vals);
                YearMoments {
                    period: dataset.periods()[s],
                    observed: vals.len(),
                    mean,
                    skewness,
                    kurtosis,
                }
            })
            .collect();
        let total = n * t;
        variables.push(VariableSummary {
            name,
            observations: total,
            missing,
            missing_percent: (10000.0 * missing as f64 / total as f64).round() / 100.0,
            by_period,
        });
    }
    DatasetSummary {
        n_individuals: n,
        n_periods: t,
        first_period: dataset.periods()[0],
        last_period: *dataset.periods().last().unwrap(),
        variables,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paneldata::{generate_synthetic, SyntheticConfig};

    #[test]
    fn one_missing_cell_in_three_hundred() {
        let cfg = SyntheticConfig { n_individuals: 15, n_periods: 20, ..SyntheticConfig::default() };
        let d = generate_synthetic(&cfg, 2).unwrap().dataset;
        let mut net = d.network().clone();
        net[[3, 4, 1]] = f64::NAN;
        let d = PanelDataset::new(
            d.schema().clone(),
            d.individuals().to_vec(),
            d.periods().to_vec(),
            d.response().to_owned(),
            d.parametric().clone(),
            net,
        )
        .unwrap();
        let s = describe(&d);
        let x2 = s.variables.iter().find(|v| v.name == "x2").unwrap();
        assert_eq!(x2.missing, 1);
        assert_eq!(x2.missing_percent, 0.33);
        assert!(s.variables.iter().filter(|v| v.name != "x2").all(|v| v.missing_percent == 0.0));
        assert_eq!(x2.by_period[4].observed, 14);
    }

    #[test]
    fn moments_of_symmetric_sample() {
        let (m, sk, ku) = moments(&[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(m, 0.0);
        assert_eq!(sk, 0.0);
        assert_eq!(ku, 1.0);
        let (_, sk, ku) = moments(&[2.0, 2.0]);
        assert!(sk.is_nan() && ku.is_nan());
    }
}
