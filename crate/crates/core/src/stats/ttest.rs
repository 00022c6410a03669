use serde::Serialize;

use super::dist::student_t_two_tailed;
use super::{mean, sample_sd, StatsError};

/// Paired t-test outcome. Differences are `after - before`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedTestResult {
    pub n: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    pub sd_before: f64,
    pub sd_after: f64,
    pub mean_diff: f64,
    pub sd_diff: f64,
    /// `mean_diff / (sd_diff / sqrt(n))`.
    pub t: f64,
    pub df: usize,
    pub p_two_tailed: f64,
}

impl PairedTestResult {
    /// t for the hypothesis `mean(before - after) = 0`.
    ///
    /// When `after` is a loss measured after an intervention, a reduction
    /// (improvement) gives a positive value. This is the sign reported in
    /// the scenario tables.
    pub fn improvement_t(&self) -> f64 {
        -self.t
    }
}

pub fn paired_t(before: &[f64], after: &[f64]) -> Result<PairedTestResult, StatsError> {
    if before.len() != after.len() {
        return Err(StatsError::LengthMismatch {
            left: before.len(),
            right: after.len(),
        });
    }
    let n = before.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    if before.iter().chain(after).any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite observation".into()));
    }
    let diffs: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let mean_diff = mean(&diffs);
    let sd_diff = sample_sd(&diffs);
    // Differences constant to within rounding count as degenerate.
    let scale = diffs.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    if sd_diff == 0.0 || sd_diff <= scale * 1e-14 {
        return Err(StatsError::ZeroVariance);
    }
    let t = mean_diff / (sd_diff / (n as f64).sqrt());
    let df = n - 1;
    Ok(PairedTestResult {
        n,
        mean_before: mean(before),
        mean_after: mean(after),
        sd_before: sample_sd(before),
        sd_after: sample_sd(after),
        mean_diff,
        sd_diff,
        t,
        df,
        p_two_tailed: student_t_two_tailed(t, df as f64),
    })
}

/// t for a mean difference given its SD and n, as printed in summary
/// tables. Same sign convention as [`PairedTestResult::t`].
pub fn t_from_summary(mean_diff: f64, sd_diff: f64, n: usize) -> Result<f64, StatsError> {
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    if !(sd_diff.is_finite() && sd_diff > 0.0) || !mean_diff.is_finite() {
        return Err(StatsError::InvalidInput(format!("mean {mean_diff}, sd {sd_diff}")));
    }
    Ok(mean_diff / (sd_diff / (n as f64).sqrt()))
}

/// Paired Cohen's d: mean of differences over their sample SD.
pub fn cohens_d(diffs: &[f64]) -> Result<f64, StatsError> {
    if diffs.len() < 2 {
        return Err(StatsError::TooFewObservations {
            needed: 2,
            got: diffs.len(),
        });
    }
    let sd = sample_sd(diffs);
    if sd == 0.0 || !sd.is_finite() {
        return Err(StatsError::ZeroVariance);
    }
    Ok(mean(diffs) / sd)
}
