//! Panel semiparametric quantile regression with a neural network component.
//!
//! The conditional `τ`-quantile of a panel response is modelled as
//! `Z_itᵀβ + ANN(X_it) + α_i` and fitted by minimizing a Huber-smoothed,
//! penalized composite pinball loss under a decreasing smoothing schedule.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod loss;
pub mod model;
pub mod network;
pub mod optim;
pub mod paneldata;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
