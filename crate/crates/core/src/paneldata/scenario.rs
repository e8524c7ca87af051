//! Train/test layouts.
//!
//! With `T` periods and horizon `H = 5`:
//!
//! * Scenario 1 (contemporaneous): train on periods `0..T-H`, test on the last `H`.
//! * Scenario 2 (lag `H`): features at `t` predict the response at `t + H`;
//!   train features `0..T-2H` and test features `T-2H..T-H`, so the test
//!   targets are the last `H` observed periods.
//! * Scenario 3 (lag `H`): train features `H..T-H` (targets `2H..T`); test
//!   features are the last `H` periods and their targets lie beyond the panel.
//!
//! In the lagged scenarios the feature-period response is appended to the
//! network covariates.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{PanelDataset, PanelSchema};
use crate::error::{Error, Result};

/// Forecast horizon and lag used by the lagged scenarios.
pub const HORIZON: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    Contemporaneous = 1,
    LaggedHoldout = 2,
    LaggedFuture = 3,
}

impl Scenario {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn lag(self) -> usize {
        match self {
            Scenario::Contemporaneous => 0,
            _ => HORIZON,
        }
    }

    pub fn augments_with_response(self) -> bool {
        self != Scenario::Contemporaneous
    }

    pub fn min_periods(self) -> usize {
        match self {
            Scenario::Contemporaneous => HORIZON + 1,
            _ => 2 * HORIZON + 5,
        }
    }
}

impl TryFrom<u8> for Scenario {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Scenario::Contemporaneous),
            2 => Ok(Scenario::LaggedHoldout),
            3 => Ok(Scenario::LaggedFuture),
            other => Err(Error::Config(format!("scenario must be 1, 2 or 3 (got {other})"))),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s.id()
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("scenario must be 1, 2 or 3 (got '{s}')")))?;
        Scenario::try_from(v)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// One observation: covariates of `individual` at period index `feature`
/// explain the response at period index `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPair {
    pub individual: usize,
    pub feature: usize,
    pub target: usize,
    /// `target` lies beyond the last observed period.
    pub future: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSplit {
    pub scenario: Scenario,
    pub lag: usize,
    pub augment_with_lagged_response: bool,
    /// Feature and target period index ranges, as `start..end`.
    pub train_features: (usize, usize),
    pub test_features: (usize, usize),
    pub train: Vec<SplitPair>,
    pub test: Vec<SplitPair>,
    n_periods: usize,
    first_period: i64,
}

pub fn scenario_split(dataset: &PanelDataset, scenario: Scenario) -> Result<ScenarioSplit> {
    let t = dataset.n_periods();
    let n = dataset.n_individuals();
    if n == 0 {
        return Err(Error::Data("panel has no individuals".into()));
    }
    if t < scenario.min_periods() {
        return Err(Error::Data(format!(
            "scenario {scenario} needs at least {} periods, panel has {t}",
            scenario.min_periods()
        )));
    }
    let h = HORIZON;
    let lag = scenario.lag();
    let (train_features, test_features) = match scenario {
        Scenario::Contemporaneous => ((0, t - h), (t - h, t)),
        Scenario::LaggedHoldout => ((0, t - h - lag), (t - h - lag, t - lag)),
        Scenario::LaggedFuture => ((h, t - lag), (t - h, t)),
    };
    let pairs = |(start, end): (usize, usize)| -> Vec<SplitPair> {
        (0..n)
            .flat_map(|i| {
                (start..end).map(move |f| SplitPair {
                    individual: i,
                    feature: f,
                    target: f + lag,
                    future: f + lag >= t,
                })
            })
            .collect()
    };
    Ok(ScenarioSplit {
        scenario,
        lag,
        augment_with_lagged_response: scenario.augments_with_response(),
        train_features,
        test_features,
        train: pairs(train_features),
        test: pairs(test_features),
        n_periods: t,
        first_period: dataset.periods()[0],
    })
}

impl ScenarioSplit {
    pub fn pairs(&self, side: Side) -> &[SplitPair] {
        match side {
            Side::Train => &self.train,
            Side::Test => &self.test,
        }
    }

    /// Calendar labels of the target periods on one side.
    pub fn target_periods(&self, side: Side) -> Vec<i64> {
        let (start, end) = match side {
            Side::Train => self.train_features,
            Side::Test => self.test_features,
        };
        (start..end)
            .map(|f| self.first_period + (f + self.lag) as i64)
            .collect()
    }

    pub fn feature_periods(&self, side: Side) -> Vec<i64> {
        let (start, end) = match side {
            Side::Train => self.train_features,
            Side::Test => self.test_features,
        };
        (start..end).map(|f| self.first_period + f as i64).collect()
    }

    /// Schema of the materialized panels.
    pub fn schema(&self, source: &PanelSchema) -> PanelSchema {
        let mut schema = source.clone();
        if self.augment_with_lagged_response {
            schema
                .network
                .push(format!("{}_lag{}", source.response, self.lag));
        }
        schema
    }

    /// Builds the regression panel for one side: periods are the target
    /// periods, covariates come from the feature periods, and future targets
    /// have a missing response.
    pub fn materialize(&self, dataset: &PanelDataset, side: Side) -> Result<PanelDataset> {
        if dataset.n_periods() != self.n_periods || dataset.periods()[0] != self.first_period {
            return Err(Error::Shape(
                "scenario split was computed for a different panel".into(),
            ));
        }
        if self.augment_with_lagged_response {
            // The lagged response is a covariate here, so it must be present.
            if (0..dataset.n_individuals())
                .any(|i| (0..dataset.n_periods()).any(|s| !dataset.y(i, s).is_finite()))
            {
                return Err(Error::Data(
                    "lagged scenarios need a complete response; impute first".into(),
                ));
            }
        }
        let (start, end) = match side {
            Side::Train => self.train_features,
            Side::Test => self.test_features,
        };
        let n = dataset.n_individuals();
        let len = end - start;
        let q = dataset.q();
        let p_src = dataset.p();
        let p = p_src + usize::from(self.augment_with_lagged_response);
        let mut response = Array2::from_elem((n, len), f64::NAN);
        let mut parametric = Array3::zeros((n, len, q));
        let mut network = Array3::zeros((n, len, p));
        for i in 0..n {
            for (s, f) in (start..end).enumerate() {
                let target = f + self.lag;
                if target < self.n_periods {
                    response[[i, s]] = dataset.y(i, target);
                }
                for j in 0..q {
                    parametric[[i, s, j]] = dataset.parametric()[[i, f, j]];
                }
                for j in 0..p_src {
                    network[[i, s, j]] = dataset.network()[[i, f, j]];
                }
                if self.augment_with_lagged_response {
                    network[[i, s, p_src]] = dataset.y(i, f);
                }
            }
        }
        PanelDataset::new(
            self.schema(dataset.schema()),
            dataset.individuals().to_vec(),
            self.target_periods(side),
            response,
            parametric,
            network,
        )
    }
}
