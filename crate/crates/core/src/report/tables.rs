//! Group scores and the analyses built on them.

use std::collections::BTreeMap;

use serde::Serialize;

use super::ReportError;
use crate::agents::{ModelId, Stage};
use crate::corpus::InfoLevel;
use crate::protocol::{Diversity, ForecastRecord, Scenario};
use crate::scoring::{brier, log_loss, median3, Metric};
use crate::stats::{mean_sd, ols_dummy, paired_t, required_d, RegressionResult, StatsError};

/// Median group forecast at one stage, scored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupScore {
    pub scenario: Scenario,
    pub question_id: String,
    pub group_key: String,
    pub position: usize,
    /// The shared model of a homogeneous group.
    pub model: Option<ModelId>,
    pub round_robin: bool,
    pub stage: Stage,
    pub median_p: f64,
    pub outcome: u8,
    pub log_loss: f64,
    pub brier: f64,
}

impl GroupScore {
    pub fn value(&self, metric: Metric) -> f64 {
        match metric {
            Metric::LogLoss => self.log_loss,
            Metric::Brier => self.brier,
        }
    }
}

/// Scores every (group, stage) with all three members present. Output is
/// ordered by scenario, question position, group key, then stage.
pub fn score_groups(records: &[ForecastRecord], epsilon: f64) -> Result<Vec<GroupScore>, ReportError> {
    type Key = (Scenario, usize, String, Stage);
    let mut triples: BTreeMap<Key, [Option<&ForecastRecord>; 3]> = BTreeMap::new();
    for r in records {
        let key = (r.scenario, r.position, r.group_key.clone(), r.stage);
        let slot = triples.entry(key).or_insert([None; 3]);
        let i = usize::from(r.agent_index);
        if i > 2 {
            return Err(ReportError::Invalid(format!("agent index {i} in {}", r.group_key)));
        }
        slot[i] = Some(r);
    }
    let mut out = Vec::with_capacity(triples.len());
    for ((scenario, position, group_key, stage), slot) in triples {
        let [Some(a), Some(b), Some(c)] = slot else {
            continue;
        };
        let median_p = median3(a.probability, b.probability, c.probability)?;
        let homogeneous = scenario.diversity == Diversity::Homogeneous;
        out.push(GroupScore {
            scenario,
            question_id: a.question_id.clone(),
            group_key,
            position,
            model: homogeneous.then_some(a.model_id),
            round_robin: a.is_round_robin(),
            stage,
            median_p,
            outcome: a.outcome,
            log_loss: log_loss(median_p, a.outcome, epsilon)?,
            brier: brier(median_p, a.outcome)?,
        });
    }
    Ok(out)
}

/// Paired before/after summary of one slice of groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedSummary {
    pub n: usize,
    pub independent_mean: f64,
    pub independent_sd: f64,
    pub deliberative_mean: f64,
    pub deliberative_sd: f64,
    pub change_mean: f64,
    pub change_sd: f64,
    /// Positive when deliberation lowered the loss. `None` when every
    /// change is identical, or there is a single pair, and the test is
    /// undefined. SDs are NaN for a single pair.
    pub t: Option<f64>,
    pub p: Option<f64>,
}

impl PairedSummary {
    pub fn from_pairs(before: &[f64], after: &[f64]) -> Result<Self, ReportError> {
        match paired_t(before, after) {
            Ok(r) => Ok(Self {
                n: r.n,
                independent_mean: r.mean_before,
                independent_sd: r.sd_before,
                deliberative_mean: r.mean_after,
                deliberative_sd: r.sd_after,
                change_mean: r.mean_diff,
                change_sd: r.sd_diff,
                t: Some(r.improvement_t()),
                p: Some(r.p_two_tailed),
            }),
            Err(StatsError::ZeroVariance) => {
                let diffs: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
                let (im, isd) = mean_sd(before);
                let (dm, dsd) = mean_sd(after);
                let (cm, _) = mean_sd(&diffs);
                Ok(Self {
                    n: before.len(),
                    independent_mean: im,
                    independent_sd: isd,
                    deliberative_mean: dm,
                    deliberative_sd: dsd,
                    change_mean: cm,
                    change_sd: 0.0,
                    t: None,
                    p: None,
                })
            }
            Err(StatsError::TooFewObservations { .. }) if before.len() == 1 && after.len() == 1 => Ok(Self {
                n: 1,
                independent_mean: before[0],
                independent_sd: f64::NAN,
                deliberative_mean: after[0],
                deliberative_sd: f64::NAN,
                change_mean: after[0] - before[0],
                change_sd: f64::NAN,
                t: None,
                p: None,
            }),
            Err(e) => Err(e.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub metric: Metric,
    #[serde(flatten)]
    pub summary: PairedSummary,
}

/// Pairs independent and deliberative scores by group.
fn paired_values<'a>(
    scores: impl Iterator<Item = &'a GroupScore>,
    metric: Metric,
) -> Result<(Vec<f64>, Vec<f64>), ReportError> {
    let mut by_group: BTreeMap<(usize, &str), [Option<f64>; 2]> = BTreeMap::new();
    for s in scores {
        let slot = by_group.entry((s.position, s.group_key.as_str())).or_insert([None; 2]);
        let i = match s.stage {
            Stage::Independent => 0,
            Stage::Deliberative => 1,
        };
        slot[i] = Some(s.value(metric));
    }
    let mut before = Vec::with_capacity(by_group.len());
    let mut after = Vec::with_capacity(by_group.len());
    for ((_, key), pair) in by_group {
        match pair {
            [Some(b), Some(a)] => {
                before.push(b);
                after.push(a);
            }
            _ => return Err(ReportError::IncompleteGroup(key.to_string())),
        }
    }
    Ok((before, after))
}

/// One row per primary scenario present in `scores`, in table order.
pub fn scenario_table(scores: &[GroupScore], metric: Metric) -> Result<Vec<ScenarioSummary>, ReportError> {
    let mut rows = Vec::new();
    for scenario in Scenario::PRIMARY {
        let slice: Vec<&GroupScore> = scores.iter().filter(|s| s.scenario == scenario).collect();
        if slice.is_empty() {
            continue;
        }
        let (before, after) = paired_values(slice.into_iter(), metric)?;
        rows.push(ScenarioSummary {
            scenario,
            metric,
            summary: PairedSummary::from_pairs(&before, &after)?,
        });
    }
    if rows.is_empty() {
        return Err(ReportError::NoData("no primary scenario has scored groups".into()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub scenario: Scenario,
    pub model: ModelId,
    #[serde(flatten)]
    pub summary: PairedSummary,
}

/// Homogeneous scenarios broken down by model, keeping for each question
/// only the group whose model the round-robin rule assigns to it.
pub fn model_breakdown(scores: &[GroupScore], metric: Metric) -> Result<Vec<ModelRow>, ReportError> {
    let mut rows = Vec::new();
    for scenario in Scenario::PRIMARY.into_iter().filter(|s| s.diversity == Diversity::Homogeneous) {
        for model in ModelId::PANEL {
            let slice = scores
                .iter()
                .filter(|s| s.scenario == scenario && s.round_robin && s.model == Some(model));
            let (before, after) = paired_values(slice, metric)?;
            if before.is_empty() {
                continue;
            }
            rows.push(ModelRow {
                scenario,
                model,
                summary: PairedSummary::from_pairs(&before, &after)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionArm {
    pub diversity: Diversity,
    pub result: RegressionResult,
}

impl RegressionArm {
    /// `(row label, coefficient)` in table order.
    pub fn labeled_rows(&self) -> Vec<(&'static str, &crate::stats::Coefficient)> {
        self.result
            .coefficients
            .iter()
            .map(|c| {
                let label = match c.name.as_str() {
                    "Intercept" => "Intercept (no info)",
                    "distributed" => "Partial info",
                    "shared" => "Full info",
                    _ => "Other",
                };
                (label, c)
            })
            .collect()
    }
}

/// Agent-level independent-stage Log Loss regressed on information level,
/// no information as the reference, separately per diversity arm. The
/// homogeneous arm uses round-robin groups only, so both arms cover each
/// question once per information level.
pub fn info_regression_table(records: &[ForecastRecord], epsilon: f64) -> Result<Vec<RegressionArm>, ReportError> {
    let mut arms = Vec::new();
    for diversity in [Diversity::Diverse, Diversity::Homogeneous] {
        let mut y = Vec::new();
        let mut levels = Vec::new();
        for r in records {
            if r.stage != Stage::Independent || r.scenario.diversity != diversity {
                continue;
            }
            if diversity == Diversity::Homogeneous && !r.is_round_robin() {
                continue;
            }
            y.push(log_loss(r.probability, r.outcome, epsilon)?);
            levels.push(r.info_level);
        }
        if y.is_empty() {
            continue;
        }
        if !levels.contains(&InfoLevel::None) {
            return Err(ReportError::NoData(format!(
                "{} arm has no no-information records; run with the baseline arms enabled",
                match diversity {
                    Diversity::Diverse => "diverse",
                    Diversity::Homogeneous => "homogeneous",
                }
            )));
        }
        let result = ols_dummy(&y, &levels, &InfoLevel::None)?;
        arms.push(RegressionArm { diversity, result });
    }
    if arms.is_empty() {
        return Err(ReportError::NoData("no independent-stage records".into()));
    }
    Ok(arms)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdeRow {
    pub scenario: Scenario,
    pub n: usize,
    pub sd_of_change: f64,
    pub d_required: f64,
    pub mde: f64,
    pub observed_effect: f64,
    pub p: Option<f64>,
}

/// Row order of the MDE table: shared before distributed within each arm.
pub const MDE_ORDER: [Scenario; 4] = [
    Scenario::PRIMARY[1],
    Scenario::PRIMARY[0],
    Scenario::PRIMARY[3],
    Scenario::PRIMARY[2],
];

/// Minimum detectable effect per scenario from the observed SD of the
/// paired changes.
pub fn mde_rows(summaries: &[ScenarioSummary], alpha: f64, power: f64) -> Result<Vec<MdeRow>, ReportError> {
    let mut rows = Vec::new();
    for scenario in MDE_ORDER {
        let Some(s) = summaries.iter().find(|s| s.scenario == scenario) else {
            continue;
        };
        // a single pair has no SD and no MDE
        let d = if s.summary.n < 2 {
            f64::NAN
        } else {
            required_d(s.summary.n, alpha, power)?
        };
        rows.push(MdeRow {
            scenario,
            n: s.summary.n,
            sd_of_change: s.summary.change_sd,
            d_required: d,
            mde: d * s.summary.change_sd,
            observed_effect: s.summary.change_mean,
            p: s.summary.p,
        });
    }
    Ok(rows)
}
