//! Information-criterion model selection over hidden sizes and penalties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{SmoothingThreshold, TauGrid};
use crate::model::{ModelKind, Objective, PenaltyConfig};
use crate::network::NetworkSpec;
use crate::paneldata::PanelDataset;
use crate::parallel::map_indexed;
use crate::trainer::{fit, FitResult, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicInput {
    /// Smoothed composite loss term of the fitted model, penalties excluded.
    pub avg_loss: f64,
    pub n: usize,
    pub t: usize,
    pub p: usize,
    pub q: usize,
    pub n1: usize,
    pub n2: Option<usize>,
}

impl BicInput {
    fn penalty_scale(&self) -> Result<f64> {
        if !(self.avg_loss > 0.0) || !self.avg_loss.is_finite() {
            return Err(Error::Domain(format!("BIC needs a positive loss (got {})", self.avg_loss)));
        }
        if self.n == 0 || self.t == 0 || self.n1 == 0 {
            return Err(Error::Domain("BIC dimensions N, T and n1 must be at least 1".into()));
        }
        let nt = (self.n * self.t) as f64;
        Ok(0.5 * nt.ln() / nt)
    }
}

/// `ln(loss) + ½·ln(NT)/(NT)·[(p+2)·n₁ + q + N]` for one hidden layer.
pub fn bic1(input: &BicInput) -> Result<f64> {
    if input.n2.is_some() {
        return Err(Error::Domain("bic1 applies to a single hidden layer".into()));
    }
    let scale = input.penalty_scale()?;
    let count = (input.p + 2) * input.n1 + input.q + input.n;
    Ok(input.avg_loss.ln() + scale * count as f64)
}

/// `ln(loss) + ½·ln(NT)/(NT)·[(p+1)·n₁ + n₂·(n₁+2) + q + N]` for two hidden layers.
pub fn bic2(input: &BicInput) -> Result<f64> {
    let n2 = match input.n2 {
        Some(n2) if n2 >= 1 => n2,
        _ => return Err(Error::Domain("bic2 needs a second hidden layer with n2 >= 1".into())),
    };
    let scale = input.penalty_scale()?;
    let count = (input.p + 1) * input.n1 + n2 * (input.n1 + 2) + input.q + input.n;
    Ok(input.avg_loss.ln() + scale * count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub n1_values: Vec<usize>,
    /// Empty for single-hidden-layer networks.
    pub n2_values: Vec<usize>,
    pub lambda1_values: Vec<f64>,
    pub lambda2_values: Vec<f64>,
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n1_values.is_empty() || self.lambda1_values.is_empty() || self.lambda2_values.is_empty() {
            return Err(Error::Config("search grid lists must be nonempty".into()));
        }
        if self.n1_values.iter().chain(&self.n2_values).any(|&n| n == 0) {
            return Err(Error::Config("hidden sizes in the search grid must be at least 1".into()));
        }
        if self
            .lambda1_values
            .iter()
            .chain(&self.lambda2_values)
            .any(|&l| !(l >= 0.0 && l.is_finite()))
        {
            return Err(Error::Config("search grid penalties must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Every point, ordered lexicographically by `(n1, n2, lambda1, lambda2)`.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut n1s = self.n1_values.clone();
        n1s.sort_unstable();
        n1s.dedup();
        let mut n2s: Vec<Option<usize>> = if self.n2_values.is_empty() {
            vec![None]
        } else {
            self.n2_values.iter().map(|&n| Some(n)).collect()
        };
        n2s.sort_unstable();
        n2s.dedup();
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (l1s, l2s) = (sorted(&self.lambda1_values), sorted(&self.lambda2_values));
        let mut out = Vec::new();
        for &n1 in &n1s {
            for &n2 in &n2s {
                for &lambda1 in &l1s {
                    for &lambda2 in &l2s {
                        out.push(GridPoint { n1, n2, lambda1, lambda2 });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n1: usize,
    pub n2: Option<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl GridPoint {
    pub fn hidden_sizes(&self) -> Vec<usize> {
        std::iter::once(self.n1).chain(self.n2).collect()
    }

    pub fn penalties(&self) -> PenaltyConfig {
        PenaltyConfig { lambda1: self.lambda1, lambda2: self.lambda2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub point: GridPoint,
    pub avg_loss: Option<f64>,
    pub bic: Option<f64>,
    /// `ok`, or the error that excluded this point.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: GridPoint,
    pub best_fit: FitResult,
    pub table: Vec<SearchRow>,
}

/// Fits every grid point with the shared config and returns the point of
/// minimum BIC. Ties go to the earliest point in `(n1, n2, λ1, λ2)` order.
pub fn grid_search(
    dataset: &PanelDataset,
    kind: ModelKind,
    grid: &TauGrid,
    search: &SearchGrid,
    template: &NetworkSpec,
    config: &TrainConfig,
) -> Result<SearchOutcome> {
    search.validate()?;
    config.validate()?;
    if !kind.has_network() {
        return Err(Error::Config(format!("grid search over hidden sizes needs a network model (got '{kind}')")));
    }
    let points = search.points();
    let eps_end = SmoothingThreshold::new(config.schedule.eps_end)?;
    let results = map_indexed(config.execution, points.len(), |j| -> Result<(FitResult, f64, f64)> {
        let point = points[j];
        let spec = NetworkSpec { hidden_sizes: point.hidden_sizes(), ..template.clone() };
        let fitted = fit(dataset, kind, grid, point.penalties(), Some(&spec), config)?;
        let objective = Objective::new(dataset, kind, grid, point.penalties()).with_execution(config.execution);
        let avg_loss = objective.parts(&fitted.params, eps_end)?.data_loss;
        let input = BicInput {
            avg_loss,
            n: dataset.n_individuals(),
            t: dataset.n_periods(),
            p: dataset.p(),
            q: if kind.has_linear() { dataset.q() } else { 0 },
            n1: point.n1,
            n2: point.n2,
        };
        let bic = if point.n2.is_some() { bic2(&input)? } else { bic1(&input)? };
        Ok((fitted, avg_loss, bic))
    });

    let mut table = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64, FitResult)> = None;
    for (j, (point, result)) in points.iter().zip(results).enumerate() {
        match result {
            Ok((fitted, avg_loss, bic)) => {
                table.push(SearchRow { point: *point, avg_loss: Some(avg_loss), bic: Some(bic), status: "ok".into() });
                if best.as_ref().is_none_or(|(_, b, _)| bic < *b) {
                    best = Some((j, bic, fitted));
                }
            }
            Err(e) => table.push(SearchRow { point: *point, avg_loss: None, bic: None, status: e.to_string() }),
        }
    }
    let (j, _, best_fit) = best.ok_or_else(|| Error::Search("every grid point failed to fit".into()))?;
    Ok(SearchOutcome { best: points[j], best_fit, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paneldata::{generate_synthetic, SyntheticConfig};
    use crate::trainer::AnnealSchedule;
    use approx::assert_abs_diff_eq;

    fn input(avg_loss: f64, n2: Option<usize>) -> BicInput {
        BicInput { avg_loss, n: 2, t: 5, p: 3, q: 2, n1: 2, n2 }
    }

    #[test]
    fn bic_examples() {
        // ln(0.1) + 0.5·(ln 10 / 10)·14
        let expect1 = 0.1f64.ln() + 0.5 * 10f64.ln() / 10.0 * 14.0;
        assert_abs_diff_eq!(expect1, -0.690775, epsilon = 1e-6);
        assert_abs_diff_eq!(bic1(&input(0.1, None)).unwrap(), expect1, epsilon = 1e-15);
        assert_abs_diff_eq!(bic2(&input(0.1, Some(2))).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bic1(&input(1.0, None)).unwrap(), 0.5 * 10f64.ln() / 10.0 * 14.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bic2(&input(1.0, Some(2))).unwrap(), 10f64.ln(), epsilon = 1e-15);
        let d = bic1(&input(0.2, None)).unwrap() - bic1(&input(0.1, None)).unwrap();
        assert_abs_diff_eq!(d, 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn bic_preconditions() {
        assert!(matches!(bic1(&input(0.0, None)), Err(Error::Domain(_))));
        assert!(matches!(bic2(&input(0.1, Some(0))), Err(Error::Domain(_))));
        assert!(matches!(bic2(&input(0.1, None)), Err(Error::Domain(_))));
        assert!(bic1(&input(-1.0, None)).is_err());
    }

    #[test]
    fn points_are_lexicographic() {
        let g = SearchGrid { n1_values: vec![3, 2], n2_values: vec![], lambda1_values: vec![0.1, 0.0], lambda2_values: vec![0.5] };
        let pts = g.points();
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[0].n1, pts[0].lambda1), (2, 0.0));
        assert_eq!((pts[3].n1, pts[3].lambda1), (3, 0.1));
    }

    #[test]
    fn small_grid_selects_table_minimum() {
        let cfg = SyntheticConfig { n_individuals: 4, n_periods: 6, ..SyntheticConfig::default() };
        let d = generate_synthetic(&cfg, 3).unwrap().dataset;
        let grid = TauGrid::single(0.5).unwrap();
        let search = SearchGrid { n1_values: vec![2, 3], n2_values: vec![], lambda1_values: vec![0.01], lambda2_values: vec![0.0, 0.1] };
        let config = TrainConfig {
            schedule: AnnealSchedule::new(0.25, 0.01, 0.25).unwrap(),
            restarts: 1,
            max_iters_per_stage: 60,
            ..TrainConfig::default()
        };
        let spec = NetworkSpec::new(2, vec![1]).unwrap();
        let out = grid_search(&d, ModelKind::Psqrnn, &grid, &search, &spec, &config).unwrap();
        assert_eq!(out.table.len(), 4);
        let min = out.table.iter().filter_map(|r| r.bic).fold(f64::INFINITY, f64::min);
        let row = out.table.iter().find(|r| r.point == out.best).unwrap();
        assert_eq!(row.bic, Some(min));
        let again = grid_search(&d, ModelKind::Psqrnn, &grid, &search, &spec, &config).unwrap();
        assert_eq!(out, again);
        assert!(grid_search(&d, ModelKind::LinearPanelQr, &grid, &search, &spec, &config).is_err());
    }
}
