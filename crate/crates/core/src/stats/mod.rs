//! Inferential statistics: paired t-tests, dummy-coded OLS, effect sizes,
//! minimum detectable effects and power curves.
//!
//! Everything here is pure and deterministic. Distribution functions live
//! in [`dist`].

pub mod dist;
mod ols;
mod power;
mod ttest;

pub use ols::{ols_dummy, Coefficient, RegressionResult};
pub use power::{mde_table, power_at, power_curve, required_d, MdeResult, PowerCurve};
pub use ttest::{cohens_d, paired_t, t_from_summary, PairedTestResult};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("zero variance in differences (degenerate test)")]
    ZeroVariance,
    #[error("{name} must lie in (0, 1), got {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("rank deficient design: {0}")]
    RankDeficient(String),
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the n-1 denominator. Two-pass.
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Mean and sample standard deviation; the SD is NaN for fewer than two values.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    (mean(xs), sample_sd(xs))
}
