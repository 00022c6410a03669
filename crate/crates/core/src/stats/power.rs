//! Power and minimum-detectable-effect calculations for paired designs,
//! using the two-sided normal approximation.

use serde::Serialize;

use super::dist::{normal_cdf, normal_quantile};
use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdeResult {
    pub label: String,
    pub sd_of_change: f64,
    pub n: usize,
    pub alpha: f64,
    pub power_target: f64,
    pub d_required: f64,
    /// `d_required * sd_of_change`.
    pub mde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerCurve {
    pub sd_of_change: f64,
    pub n: usize,
    pub alpha: f64,
    /// `(effect_size, power)` in grid order.
    pub points: Vec<(f64, f64)>,
}

fn check_prob(name: &'static str, value: f64) -> Result<(), StatsError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidProbability { name, value })
    }
}

/// Standardized effect needed to reach `power` at two-sided level `alpha`:
/// `(z_{1-alpha/2} + z_power) / sqrt(n)`.
pub fn required_d(n: usize, alpha: f64, power: f64) -> Result<f64, StatsError> {
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    check_prob("alpha", alpha)?;
    check_prob("power", power)?;
    let z_alpha = normal_quantile(1.0 - alpha / 2.0);
    let z_power = normal_quantile(power);
    Ok((z_alpha + z_power) / (n as f64).sqrt())
}

pub fn mde_table(
    sd_by_scenario: &[(String, f64)],
    n: usize,
    alpha: f64,
    power: f64,
) -> Result<Vec<MdeResult>, StatsError> {
    let d = required_d(n, alpha, power)?;
    sd_by_scenario
        .iter()
        .map(|(label, sd)| {
            if !sd.is_finite() || *sd < 0.0 {
                return Err(StatsError::InvalidInput(format!("sd for {label} must be >= 0")));
            }
            Ok(MdeResult {
                label: label.clone(),
                sd_of_change: *sd,
                n,
                alpha,
                power_target: power,
                d_required: d,
                mde: d * sd,
            })
        })
        .collect()
}

/// Power of the two-sided test against a raw effect `effect`.
pub fn power_at(effect: f64, sd: f64, n: usize, alpha: f64) -> f64 {
    let z = normal_quantile(1.0 - alpha / 2.0);
    let shift = effect.abs() / (sd / (n as f64).sqrt());
    normal_cdf(shift - z) + normal_cdf(-shift - z)
}

pub fn power_curve(
    sd: f64,
    n: usize,
    alpha: f64,
    effect_grid: &[f64],
) -> Result<PowerCurve, StatsError> {
    if !(sd.is_finite() && sd > 0.0) {
        return Err(StatsError::InvalidInput(format!("sd must be positive, got {sd}")));
    }
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    check_prob("alpha", alpha)?;
    if let Some(bad) = effect_grid.iter().find(|e| !e.is_finite()) {
        return Err(StatsError::InvalidInput(format!("non-finite grid value {bad}")));
    }
    Ok(PowerCurve {
        sd_of_change: sd,
        n,
        alpha,
        points: effect_grid
            .iter()
            .map(|&e| (e, power_at(e, sd, n, alpha)))
            .collect(),
    })
}
