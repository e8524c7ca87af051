//! Scalar loss kernels: the pinball (check) loss, the Huber norm, the
//! Huber-smoothed pinball loss and its derivative in the residual.
//!
//! The smoothed loss uses the factor `1 - tau` on negative residuals, so it
//! stays nonnegative and approximates the pinball loss within
//! `max(tau, 1 - tau) * epsilon / 2` everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered quantile levels with their composite weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTauGrid", into = "RawTauGrid")]
pub struct TauGrid {
    taus: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTauGrid {
    taus: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<RawTauGrid> for TauGrid {
    type Error = Error;
    fn try_from(raw: RawTauGrid) -> Result<Self> {
        TauGrid::new(raw.taus, raw.weights)
    }
}

impl From<TauGrid> for RawTauGrid {
    fn from(grid: TauGrid) -> Self {
        RawTauGrid {
            taus: grid.taus,
            weights: grid.weights,
        }
    }
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

impl TauGrid {
    pub fn new(taus: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Config("quantile grid is empty".into()));
        }
        if taus.len() != weights.len() {
            return Err(Error::Config(format!(
                "quantile grid has {} levels but {} weights",
                taus.len(),
                weights.len()
            )));
        }
        for &tau in &taus {
            check_tau(tau)?;
        }
        if taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Config("quantile weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Config(format!(
                "quantile weights must sum to 1 (got {total})"
            )));
        }
        Ok(Self { taus, weights })
    }

    /// Equal weights `1/K` over the given levels.
    pub fn uniform(taus: Vec<f64>) -> Result<Self> {
        let k = taus.len().max(1);
        let weights = vec![1.0 / k as f64; taus.len()];
        Self::new(taus, weights)
    }

    pub fn single(tau: f64) -> Result<Self> {
        Self::new(vec![tau], vec![1.0])
    }

    /// `tau_k = (2k + 1) / (2K)` for `k = 0..K`; with `K = 50` this is
    /// `0.01 + 0.02k`.
    pub fn midpoints(k: usize) -> Result<Self> {
        let taus = (0..k)
            .map(|i| (2 * i + 1) as f64 / (2 * k) as f64)
            .collect();
        Self::uniform(taus)
    }

    /// `tau_k = k / (K + 1)` for `k = 1..=K`; `K = 9` gives `0.1, ..., 0.9`.
    pub fn interior(k: usize) -> Result<Self> {
        let taus = (1..=k).map(|i| i as f64 / (k + 1) as f64).collect();
        Self::uniform(taus)
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.taus.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Width of the quadratic zone of the Huber norm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SmoothingThreshold(f64);

impl SmoothingThreshold {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && epsilon.is_finite() {
            Ok(Self(epsilon))
        } else {
            Err(Error::Domain(format!(
                "smoothing threshold must be positive and finite (got {epsilon})"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for SmoothingThreshold {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SmoothingThreshold> for f64 {
    fn from(e: SmoothingThreshold) -> f64 {
        e.0
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "quantile level must lie in (0, 1) (got {tau})"
        )))
    }
}

/// Check loss `u * (tau - 1{u < 0})`.
pub fn pinball(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball_unchecked(u, tau))
}

#[inline]
pub(crate) fn pinball_unchecked(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

pub fn huber(u: f64, epsilon: SmoothingThreshold) -> f64 {
    huber_unchecked(u, epsilon.0)
}

#[inline]
pub(crate) fn huber_unchecked(u: f64, eps: f64) -> f64 {
    let a = u.abs();
    if a <= eps {
        u * u / (2.0 * eps)
    } else {
        a - eps / 2.0
    }
}

#[inline]
pub(crate) fn huber_deriv_unchecked(u: f64, eps: f64) -> f64 {
    if u.abs() <= eps {
        u / eps
    } else {
        u.signum()
    }
}

/// Derivative of the Huber norm; `u / epsilon` inside the quadratic zone and
/// `sign(u)` outside.
pub fn huber_deriv(u: f64, epsilon: SmoothingThreshold) -> f64 {
    huber_deriv_unchecked(u, epsilon.0)
}

pub fn smoothed_pinball(u: f64, tau: f64, epsilon: SmoothingThreshold) -> Result<f64> {
    check_tau(tau)?;
    Ok(smoothed_pinball_unchecked(u, tau, epsilon.0))
}

#[inline]
pub(crate) fn smoothed_pinball_unchecked(u: f64, tau: f64, eps: f64) -> f64 {
    let h = huber_unchecked(u, eps);
    if u < 0.0 {
        (1.0 - tau) * h
    } else {
        tau * h
    }
}

pub fn smoothed_pinball_deriv(u: f64, tau: f64, epsilon: SmoothingThreshold) -> Result<f64> {
    check_tau(tau)?;
    Ok(smoothed_pinball_deriv_unchecked(u, tau, epsilon.0))
}

#[inline]
pub(crate) fn smoothed_pinball_deriv_unchecked(u: f64, tau: f64, eps: f64) -> f64 {
    let d = huber_deriv_unchecked(u, eps);
    if u < 0.0 {
        (1.0 - tau) * d
    } else {
        tau * d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn eps(v: f64) -> SmoothingThreshold {
        SmoothingThreshold::new(v).unwrap()
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(0.0, 0.7).unwrap(), 0.0);
        assert_abs_diff_eq!(pinball(2.0, 0.3).unwrap(), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(pinball(-2.0, 0.3).unwrap(), 1.4, epsilon = 1e-15);
        assert!(matches!(pinball(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(pinball(1.0, 1.0), Err(Error::Domain(_))));
        assert!(pinball(1.0, f64::NAN).is_err());
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber(0.5, eps(1.0)), 0.125);
        assert_eq!(huber(2.0, eps(1.0)), 1.5);
        assert_eq!(huber(-3.0, eps(0.5)), 2.75);
        assert!(SmoothingThreshold::new(0.0).is_err());
        assert!(SmoothingThreshold::new(-1.0).is_err());
    }

    #[test]
    fn smoothed_pinball_examples() {
        assert_abs_diff_eq!(
            smoothed_pinball(2.0, 0.3, eps(1.0)).unwrap(),
            0.45,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            smoothed_pinball(-2.0, 0.3, eps(1.0)).unwrap(),
            1.05,
            epsilon = 1e-15
        );
        assert_eq!(smoothed_pinball(0.0, 0.5, eps(0.1)).unwrap(), 0.0);
        assert!(smoothed_pinball(1.0, 1.5, eps(0.1)).is_err());
    }

    #[test]
    fn smoothed_pinball_deriv_examples() {
        assert_abs_diff_eq!(
            smoothed_pinball_deriv(2.0, 0.3, eps(1.0)).unwrap(),
            0.3,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            smoothed_pinball_deriv(0.5, 0.3, eps(1.0)).unwrap(),
            0.15,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            smoothed_pinball_deriv(-2.0, 0.3, eps(1.0)).unwrap(),
            -0.7,
            epsilon = 1e-15
        );
    }

    #[test]
    fn converges_to_pinball_as_epsilon_shrinks() {
        let (u, tau) = (1e-6, 0.3);
        let gaps: Vec<f64> = [-8, -16, -24]
            .iter()
            .map(|&e| {
                let e = eps(2f64.powi(e));
                (smoothed_pinball(u, tau, e).unwrap() - pinball(u, tau).unwrap()).abs()
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    }

    #[test]
    fn tau_grid_validation() {
        assert!(TauGrid::new(vec![], vec![]).is_err());
        assert!(TauGrid::new(vec![0.5, 0.4], vec![0.5, 0.5]).is_err());
        assert!(TauGrid::new(vec![0.5], vec![0.9]).is_err());
        assert!(TauGrid::new(vec![0.4, 0.5], vec![1.0, 0.0]).is_err());
        assert!(TauGrid::new(vec![0.4], vec![1.0, 0.0]).is_err());
        let g = TauGrid::midpoints(50).unwrap();
        assert_eq!(g.len(), 50);
        assert_abs_diff_eq!(g.taus()[0], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(g.taus()[49], 0.99, epsilon = 1e-15);
        for (k, &t) in g.taus().iter().enumerate() {
            assert_abs_diff_eq!(t, 0.01 + 0.02 * k as f64, epsilon = 1e-12);
        }
        let g9 = TauGrid::interior(9).unwrap();
        assert_abs_diff_eq!(g9.taus()[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(g9.taus()[8], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn tau_grid_serde_validates() {
        let g = TauGrid::interior(3).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<TauGrid>(&s).unwrap(), g);
        assert!(serde_json::from_str::<TauGrid>(r#"{"taus":[1.5],"weights":[1.0]}"#).is_err());
    }

    proptest! {
        #[test]
        fn smoothing_bound_holds(u in -50.0f64..50.0, tau in 0.001f64..0.999, e in 1e-6f64..5.0) {
            let s = smoothed_pinball(u, tau, eps(e)).unwrap();
            let p = pinball(u, tau).unwrap();
            prop_assert!(s >= 0.0);
            prop_assert!((s - p).abs() <= tau.max(1.0 - tau) * e / 2.0 + 1e-12);
        }

        #[test]
        fn deriv_matches_finite_difference(u in -5.0f64..5.0, tau in 0.01f64..0.99, e in 0.01f64..2.0) {
            let a = u.abs();
            prop_assume!(!(a >= e * 0.99 && a <= e * 1.01));
            prop_assume!(a > 1e-3);
            let h = 1e-6;
            let fd = (smoothed_pinball(u + h, tau, eps(e)).unwrap()
                - smoothed_pinball(u - h, tau, eps(e)).unwrap()) / (2.0 * h);
            let an = smoothed_pinball_deriv(u, tau, eps(e)).unwrap();
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "fd={fd} an={an}");
        }

        #[test]
        fn symmetry(u in -100.0f64..100.0, e in 1e-4f64..10.0) {
            prop_assert_eq!(pinball(u, 0.5).unwrap(), u.abs() / 2.0);
            prop_assert_eq!(huber(u, eps(e)), huber(-u, eps(e)));
        }
    }
}
