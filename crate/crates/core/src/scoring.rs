//! Group aggregation, proper scores and calibration binning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default clamp for Log Loss: half a percentage point.
pub const DEFAULT_EPSILON: f64 = 0.005;
pub const DEFAULT_BIN_COUNT: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("epsilon must lie in (0, 0.5), got {0}")]
    InvalidEpsilon(f64),
    #[error("bin count must be at least 2, got {0}")]
    InvalidBinCount(usize),
    #[error("no forecasts to bin")]
    EmptyInput,
}

fn check_p(p: f64) -> Result<(), ScoringError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ScoringError::ProbabilityOutOfRange(p))
    }
}

/// Middle order statistic of three probabilities.
pub fn median3(a: f64, b: f64, c: f64) -> Result<f64, ScoringError> {
    check_p(a)?;
    check_p(b)?;
    check_p(c)?;
    Ok(a.min(b).max(a.max(b).min(c)))
}

/// Cross-entropy of forecast `p` for binary outcome `y`, with `p` clamped to
/// `[epsilon, 1 - epsilon]`.
pub fn log_loss(p: f64, y: u8, epsilon: f64) -> Result<f64, ScoringError> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(ScoringError::InvalidEpsilon(epsilon));
    }
    check_p(p)?;
    let p = p.clamp(epsilon, 1.0 - epsilon);
    Ok(if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
}

/// Squared error `(p - y)^2`. No clamping.
pub fn brier(p: f64, y: u8) -> Result<f64, ScoringError> {
    check_p(p)?;
    let d = p - f64::from(y);
    Ok(d * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    LogLoss,
    Brier,
}

impl Metric {
    pub fn score(self, p: f64, y: u8, epsilon: f64) -> Result<f64, ScoringError> {
        match self {
            Metric::LogLoss => log_loss(p, y, epsilon),
            Metric::Brier => brier(p, y),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::LogLoss => "Log Loss",
            Metric::Brier => "Brier Score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    /// `None` for an empty bin.
    pub mean_predicted: Option<f64>,
    /// `None` for an empty bin.
    pub observed_frequency: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationCurve {
    pub label: String,
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationCurve {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Equal-width reliability bins over [0, 1]. Bins are `[lo, hi)` except the
/// last, which is closed on the right.
pub fn calibration(forecasts: &[(f64, u8)], bin_count: usize) -> Result<Vec<CalibrationBin>, ScoringError> {
    if bin_count < 2 {
        return Err(ScoringError::InvalidBinCount(bin_count));
    }
    if forecasts.is_empty() {
        return Err(ScoringError::EmptyInput);
    }
    let mut sum_p = vec![0.0; bin_count];
    let mut sum_y = vec![0u64; bin_count];
    let mut count = vec![0usize; bin_count];
    for &(p, y) in forecasts {
        check_p(p)?;
        let idx = ((p * bin_count as f64).floor() as usize).min(bin_count - 1);
        sum_p[idx] += p;
        sum_y[idx] += u64::from(y);
        count[idx] += 1;
    }
    Ok((0..bin_count)
        .map(|i| {
            let c = count[i];
            CalibrationBin {
                lower: i as f64 / bin_count as f64,
                upper: (i + 1) as f64 / bin_count as f64,
                mean_predicted: (c > 0).then(|| sum_p[i] / c as f64),
                observed_frequency: (c > 0).then(|| sum_y[i] as f64 / c as f64),
                count: c,
            }
        })
        .collect())
}
