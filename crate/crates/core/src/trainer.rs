//! Minimization of the smoothed objective: an outer loop over a decreasing
//! smoothing schedule, warm-starting each stage from the previous one, and
//! independent random restarts of the network weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{SmoothingThreshold, TauGrid};
use crate::model::{ModelKind, ModelParameters, Objective, PenaltyConfig};
use crate::network::{init_parameters, NetworkSpec};
use crate::optim::{minimize, Optimizer, Termination};
use crate::paneldata::PanelDataset;
use crate::parallel::{map_indexed, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub eps_start: f64,
    pub eps_end: f64,
    /// Multiplier applied between stages, in `(0, 1)`.
    pub factor: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            eps_start: 2f64.powi(-8),
            eps_end: 2f64.powi(-32),
            factor: 2f64.powi(-4),
        }
    }
}

impl AnnealSchedule {
    pub fn new(eps_start: f64, eps_end: f64, factor: f64) -> Result<Self> {
        let s = Self {
            eps_start,
            eps_end,
            factor,
        };
        s.validate()?;
        Ok(s)
    }

    /// A single stage at `epsilon`.
    pub fn constant(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, epsilon, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_end > 0.0 && self.eps_end.is_finite()) {
            return Err(Error::Config(format!("eps_end must be positive (got {})", self.eps_end)));
        }
        if !(self.eps_start >= self.eps_end && self.eps_start.is_finite()) {
            return Err(Error::Config(format!(
                "eps_start ({}) must be finite and at least eps_end ({})",
                self.eps_start, self.eps_end
            )));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!(
                "annealing factor must lie in (0, 1) (got {})",
                self.factor
            )));
        }
        Ok(())
    }
}

/// `eps_start · factor^j` while above `eps_end`, then `eps_end` itself.
pub fn epsilon_sequence(schedule: &AnnealSchedule) -> Result<Vec<f64>> {
    schedule.validate()?;
    let mut out = Vec::new();
    let mut eps = schedule.eps_start;
    // Relative slack absorbs rounding when eps_end is an exact power of factor.
    while eps > schedule.eps_end * (1.0 + 1e-12) {
        out.push(eps);
        eps *= schedule.factor;
    }
    out.push(schedule.eps_end);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: AnnealSchedule,
    pub restarts: usize,
    pub max_iters_per_stage: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: AnnealSchedule::default(),
            restarts: 5,
            max_iters_per_stage: 500,
            grad_tol: 1e-6,
            seed: 0,
            optimizer: Optimizer::default(),
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.restarts == 0 || self.max_iters_per_stage == 0 {
            return Err(Error::Config("restarts and max_iters_per_stage must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config(format!("grad_tol must be positive (got {})", self.grad_tol)));
        }
        match self.optimizer {
            Optimizer::Lbfgs { memory: 0 } => {
                Err(Error::Config("L-BFGS memory must be at least 1".into()))
            }
            Optimizer::GradientDescent { step } if !(step > 0.0 && step.is_finite()) => {
                Err(Error::Config(format!("gradient descent step must be positive (got {step})")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub epsilon: f64,
    pub iterations: usize,
    /// Objective at this stage's ε when the stage ended.
    pub objective: f64,
    pub termination: Termination,
    /// Objective after every accepted iterate of the stage; not persisted.
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParameters,
    /// Objective of `params` at the final ε.
    pub final_objective: f64,
    pub restart_index: usize,
    pub stage_trace: Vec<StageRecord>,
    /// The final stage ended by gradient tolerance or by a stalled line
    /// search, not by the iteration cap.
    pub converged: bool,
    /// Final objective of every restart that was run, by index.
    pub restart_objectives: Vec<f64>,
}

/// Kinds without a network have a deterministic start, so only one restart
/// is computed for them.
fn effective_restarts(kind: ModelKind, config: &TrainConfig) -> usize {
    if kind.has_network() {
        config.restarts
    } else {
        1
    }
}

struct RestartOutcome {
    params: ModelParameters,
    objective: f64,
    trace: Vec<StageRecord>,
}

fn run_restart(
    objective: &Objective,
    template: &ModelParameters,
    epsilons: &[f64],
    config: &TrainConfig,
) -> Result<RestartOutcome> {
    let kind = objective.kind;
    let mut x = template.to_free_vector(kind);
    let mut trace = Vec::with_capacity(epsilons.len());
    let mut last = f64::NAN;
    for (stage, &eps) in epsilons.iter().enumerate() {
        let epsilon = SmoothingThreshold::new(eps)?;
        let outcome = minimize(
            |v: &[f64]| -> Result<(f64, Vec<f64>)> {
                let p = template.with_free_vector(kind, v)?;
                let (f, g) = objective.value_and_gradient_prevalidated(&p, epsilon)?;
                Ok((f, g.to_free_vector(kind)))
            },
            x,
            config.optimizer,
            config.grad_tol,
            config.max_iters_per_stage,
            |v| Error::Numeric(format!("objective is not finite ({v})")),
        )
        .map_err(|failure| Error::Training {
            stage,
            epsilon: eps,
            iteration: failure.iteration,
            message: failure.error.to_string(),
        })?;
        x = outcome.x;
        last = outcome.value;
        trace.push(StageRecord {
            epsilon: eps,
            iterations: outcome.iterations,
            objective: outcome.value,
            termination: outcome.termination,
            history: outcome.history,
        });
    }
    Ok(RestartOutcome {
        params: template.with_free_vector(kind, &x)?,
        objective: last,
        trace,
    })
}

/// Fits one parameter set to the whole quantile grid. The dataset must be
/// complete (imputed); standardization is the caller's choice. `spec` is
/// required for kinds with a network and ignored otherwise.
pub fn fit(
    dataset: &PanelDataset,
    kind: ModelKind,
    grid: &TauGrid,
    penalties: PenaltyConfig,
    spec: Option<&NetworkSpec>,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    if dataset.n_individuals() == 0 || dataset.n_periods() == 0 {
        return Err(Error::Data("panel must have N >= 1 and T >= 1".into()));
    }
    let spec = if kind.has_network() { spec } else { None };
    if let Some(spec) = spec {
        if spec.input_dim != dataset.p() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, dataset has p = {}",
                spec.input_dim,
                dataset.p()
            )));
        }
    }
    let epsilons = epsilon_sequence(&config.schedule)?;
    let base = ModelParameters::zeros(kind, dataset.q(), dataset.n_individuals(), spec)?;
    let objective = Objective::new(dataset, kind, grid, penalties).with_execution(config.execution);
    objective.validate(&base)?;

    let restarts = effective_restarts(kind, config);
    let outcomes = map_indexed(config.execution, restarts, |r| {
        let mut template = base.clone();
        if let Some(net) = template.network.as_mut() {
            net.params = init_parameters(&net.spec, config.seed.wrapping_add(r as u64));
        }
        run_restart(&objective, &template, &epsilons, config)
    });

    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut restart_objectives = Vec::with_capacity(restarts);
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        restart_objectives.push(outcome.objective);
        // Strict comparison keeps the lowest index among ties.
        if best.as_ref().is_none_or(|(_, b)| outcome.objective < b.objective) {
            best = Some((r, outcome));
        }
    }
    let (restart_index, best) = best.expect("at least one restart");
    let converged = best
        .trace
        .last()
        .is_some_and(|s| s.termination != Termination::IterationLimit);
    Ok(FitResult {
        params: best.params,
        final_objective: best.objective,
        restart_index,
        stage_trace: best.trace,
        converged,
        restart_objectives,
    })
}

/// Independent single-level fits, one per entry of `taus`, in input order.
pub fn fit_per_tau(
    dataset: &PanelDataset,
    kind: ModelKind,
    taus: &[f64],
    penalties: PenaltyConfig,
    spec: Option<&NetworkSpec>,
    config: &TrainConfig,
) -> Result<Vec<FitResult>> {
    taus.iter()
        .map(|&tau| fit(dataset, kind, &TauGrid::single(tau)?, penalties, spec, config))
        .collect()
}
