//! Tables and figure data computed from a run's records file.
//!
//! Reports are pure views: the same records give byte-identical output.
//!
//! ```text
//! <out>/tables/*.csv, *.txt
//! <out>/figures/calibration_<scenario>.csv, calibration.svg, power.csv, power.svg
//! <out>/manifest.json
//! ```

pub mod format;
mod plots;
mod tables;

pub use plots::{
    calibration_panels, calibration_svg, emit_plots, power_series, power_svg, CalibrationPanel, PlotData, PowerSeries,
    CALIBRATION_CONVENTION,
};
pub use tables::{
    info_regression_table, mde_rows, model_breakdown, scenario_table, score_groups, GroupScore, MdeRow, ModelRow,
    PairedSummary, RegressionArm, ScenarioSummary, MDE_ORDER,
};

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::warn;

use crate::corpus::{CorpusError, InfoLevel};
use crate::pipeline::load_corpus_with_digest;
use crate::protocol::{
    plan_groups, planned_cells, read_manifest, read_records, Diversity, ForecastRecord, RunManifest, Scenario,
    StoreError, MANIFEST_FILE, RECORDS_FILE,
};
use crate::scoring::{Metric, ScoringError};
use crate::stats::StatsError;
use format::{fixed, fmt3, fmt_p, fmt_p3, fmt_p_bare, fmt_t, signed3, thousands, TextTable};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run is incomplete: {} cell(s) missing", missing.len())]
    Incomplete { missing: Vec<String> },
    #[error("group {0} lacks a stage")]
    IncompleteGroup(String),
    #[error("not enough data: {0}")]
    NoData(String),
    #[error("invalid records: {0}")]
    Invalid(String),
    #[error("corpus digest {found} does not match the run manifest ({expected})")]
    DigestMismatch { expected: String, found: String },
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn info_words(info: InfoLevel) -> &'static str {
    match info {
        InfoLevel::None => "no",
        InfoLevel::Distributed => "distributed",
        InfoLevel::Shared => "shared",
    }
}

/// Row label in the MDE table ("Same model, shared information").
pub fn mde_label(s: Scenario) -> String {
    match s.diversity {
        Diversity::Diverse => s.label(),
        Diversity::Homogeneous => format!("Same model, {} information", info_words(s.info)),
    }
}

/// Row label in the model breakdown ("Same model, distributed info.").
pub fn breakdown_label(s: Scenario) -> String {
    format!("Same model, {} info.", info_words(s.info))
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn num(x: f64) -> String {
    format::csv_num(Some(x))
}

fn opt_num(x: Option<f64>) -> String {
    format::csv_num(x)
}

/// A table in both machine (CSV) and display (aligned text) form.
#[derive(Debug, Clone)]
pub struct RenderedTable {
    pub name: &'static str,
    pub csv: String,
    pub text: String,
}

pub const SCENARIO_COLUMNS: [&str; 6] = ["Scenario", "Independent", "Deliberative", "Change", "t", "p"];
pub const BREAKDOWN_COLUMNS: [&str; 8] = ["Scenario", "Model", "n", "Independent", "Deliberative", "Change", "t", "p"];
pub const REGRESSION_COLUMNS: [&str; 6] = ["", "Predictor", "β", "SE", "t", "p"];
pub const MDE_COLUMNS: [&str; 5] = ["Scenario", "SD of Change", "MDE (80% power)", "Observed Effect", "p-value"];

pub fn render_scenario_table(rows: &[ScenarioSummary], metric: Metric) -> Result<RenderedTable, ReportError> {
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                r.scenario.label(),
                s.n.to_string(),
                num(s.independent_mean),
                num(s.independent_sd),
                num(s.deliberative_mean),
                num(s.deliberative_sd),
                num(s.change_mean),
                num(s.change_sd),
                opt_num(s.t),
                opt_num(s.p),
            ]
        })
        .collect();
    let csv = csv_string(
        &[
            "scenario",
            "n",
            "independent_mean",
            "independent_sd",
            "deliberative_mean",
            "deliberative_sd",
            "change_mean",
            "change_sd",
            "t",
            "p",
        ],
        &csv_rows,
    )?;
    let text_rows = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                r.scenario.label(),
                format!("{} ({})", fmt3(s.independent_mean), fmt3(s.independent_sd)),
                format!("{} ({})", fmt3(s.deliberative_mean), fmt3(s.deliberative_sd)),
                format!("{} ({})", signed3(s.change_mean), fmt3(s.change_sd)),
                fmt_t(s.t),
                fmt_p(s.p),
            ]
        })
        .collect();
    let ns: Vec<String> = rows.iter().map(|r| r.summary.n.to_string()).collect();
    let (name, title) = match metric {
        Metric::LogLoss => (
            "scenario_logloss",
            "Effect of deliberation on forecast accuracy by scenario on Log Loss",
        ),
        Metric::Brier => (
            "scenario_brier",
            "Effect of deliberation on forecast accuracy by scenario (Brier Score)",
        ),
    };
    let table = TextTable {
        title: title.into(),
        header: vec![
            SCENARIO_COLUMNS.iter().map(|s| s.to_string()).collect(),
            vec!["".into(), "mean (SD)".into(), "mean (SD)".into(), "mean (SD)".into(), "".into(), "".into()],
        ],
        rows: text_rows,
        left_cols: 1,
        note: Some(format!(
            "Note: n = {} groups (rows in order). Change = Deliberative minus Independent; negative values indicate improvement. t is positive when deliberation lowered the score.",
            ns.join(", ")
        )),
    };
    Ok(RenderedTable {
        name,
        csv,
        text: table.render(),
    })
}

pub fn render_model_breakdown(rows: &[ModelRow]) -> Result<RenderedTable, ReportError> {
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                breakdown_label(r.scenario),
                r.model.display_name().to_string(),
                s.n.to_string(),
                num(s.independent_mean),
                num(s.deliberative_mean),
                num(s.change_mean),
                opt_num(s.t),
                opt_num(s.p),
            ]
        })
        .collect();
    let csv = csv_string(
        &["scenario", "model", "n", "independent", "deliberative", "change", "t", "p"],
        &csv_rows,
    )?;
    let text_rows = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                breakdown_label(r.scenario),
                r.model.display_name().to_string(),
                s.n.to_string(),
                fmt3(s.independent_mean),
                fmt3(s.deliberative_mean),
                signed3(s.change_mean),
                fmt_t(s.t),
                fmt_p(s.p),
            ]
        })
        .collect();
    let table = TextTable {
        title: "Deliberation effects by model type (homogeneous scenarios only)".into(),
        header: vec![BREAKDOWN_COLUMNS.iter().map(|s| s.to_string()).collect()],
        rows: text_rows,
        left_cols: 2,
        note: Some(
            "Note: Questions were distributed across model types using round-robin assignment. Values show mean Log Loss."
                .into(),
        ),
    };
    Ok(RenderedTable {
        name: "model_breakdown",
        csv,
        text: table.render(),
    })
}

fn arm_title(a: &RegressionArm) -> String {
    let d = match a.diversity {
        Diversity::Diverse => "Diverse",
        Diversity::Homogeneous => "Homogeneous",
    };
    format!("{d} (n = {})", thousands(a.result.n))
}

/// `arms` empty with `reason` set renders the header and the reason.
pub fn render_info_regression(arms: &[RegressionArm], reason: Option<&str>) -> Result<RenderedTable, ReportError> {
    let mut csv_rows = Vec::new();
    let mut text_rows = Vec::new();
    for arm in arms {
        text_rows.push(vec![arm_title(arm)]);
        for (label, c) in arm.labeled_rows() {
            csv_rows.push(vec![
                match arm.diversity {
                    Diversity::Diverse => "diverse".to_string(),
                    Diversity::Homogeneous => "homogeneous".to_string(),
                },
                arm.result.n.to_string(),
                label.to_string(),
                num(c.beta),
                num(c.se),
                num(c.t),
                num(c.p),
            ]);
            let beta = if c.name == "Intercept" { fmt3(c.beta) } else { signed3(c.beta) };
            text_rows.push(vec![
                String::new(),
                label.to_string(),
                beta,
                fmt3(c.se),
                fixed(c.t, 2),
                fmt_p_bare(Some(c.p)),
            ]);
        }
    }
    let csv = csv_string(&["arm", "n", "predictor", "beta", "se", "t", "p"], &csv_rows)?;
    let note = match reason {
        Some(r) => format!("Not estimated: {r}."),
        None => "Note: agent-level independent-stage forecasts; reference category is no information. Homogeneous arm uses round-robin groups.".into(),
    };
    let table = TextTable {
        title: "Effect of information on forecast accuracy, measured as Log Loss (independent stage only)".into(),
        header: vec![REGRESSION_COLUMNS.iter().map(|s| s.to_string()).collect()],
        rows: text_rows,
        left_cols: 2,
        note: Some(note),
    };
    Ok(RenderedTable {
        name: "information_regression",
        csv,
        text: table.render(),
    })
}

pub fn render_mde(rows: &[MdeRow], power: f64) -> Result<RenderedTable, ReportError> {
    let mde_col = format!("MDE ({}% power)", fixed(power * 100.0, 0));
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                mde_label(r.scenario),
                r.n.to_string(),
                num(r.sd_of_change),
                num(r.d_required),
                num(r.mde),
                num(r.observed_effect),
                opt_num(r.p),
            ]
        })
        .collect();
    let csv = csv_string(
        &["scenario", "n", "sd_of_change", "d_required", "mde", "observed_effect", "p_value"],
        &csv_rows,
    )?;
    let text_rows = rows
        .iter()
        .map(|r| {
            vec![
                mde_label(r.scenario),
                fmt3(r.sd_of_change),
                fmt3(r.mde),
                signed3(r.observed_effect),
                fmt_p3(r.p),
            ]
        })
        .collect();
    let ds: Vec<String> = rows
        .iter()
        .map(|r| format!("n = {}: d = {}", r.n, fixed(r.d_required, 3)))
        .collect::<Vec<_>>();
    let mut uniq = Vec::new();
    for d in ds {
        if !uniq.contains(&d) {
            uniq.push(d);
        }
    }
    let mut header: Vec<String> = MDE_COLUMNS.iter().map(|s| s.to_string()).collect();
    header[2] = mde_col;
    let table = TextTable {
        title: "Minimum Detectable Effects by Scenario".into(),
        header: vec![header],
        rows: text_rows,
        left_cols: 1,
        note: Some(format!(
            "Note: MDE = required Cohen's d x SD of change; {}.",
            uniq.join("; ")
        )),
    };
    Ok(RenderedTable {
        name: "mde",
        csv,
        text: table.render(),
    })
}

pub fn render_group_scores(scores: &[GroupScore]) -> Result<String, ReportError> {
    let rows: Vec<Vec<String>> = scores
        .iter()
        .map(|s| {
            vec![
                s.scenario.key(),
                s.question_id.clone(),
                s.group_key.clone(),
                s.stage.as_str().to_string(),
                num(s.median_p),
                s.outcome.to_string(),
                num(s.log_loss),
                num(s.brier),
            ]
        })
        .collect();
    csv_string(
        &["scenario", "question_id", "group_key", "stage", "median_p", "outcome", "log_loss", "brier"],
        &rows,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    /// Which scenario table goes to standard output.
    pub metric: Metric,
    /// Emit only the MDE table and power figure.
    pub only_mde: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            metric: Metric::LogLoss,
            only_mde: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Text meant for standard output.
    pub stdout: String,
}

/// Cells the manifest's plan requires that the records lack. Needs the
/// corpus; when it cannot be read, falls back to checking that every group
/// present in the records has all six cells.
pub fn missing_cells(manifest: &RunManifest, records: &[ForecastRecord]) -> Result<Vec<String>, ReportError> {
    let have: HashSet<String> = records.iter().map(|r| r.cell().to_string()).collect();
    let planned = match manifest.config.corpus_path().map(load_corpus_with_digest) {
        Ok(Ok((corpus, digest))) => {
            if digest != manifest.corpus_digest {
                return Err(ReportError::DigestMismatch {
                    expected: manifest.corpus_digest.clone(),
                    found: digest,
                });
            }
            let scenarios = manifest
                .scenarios
                .iter()
                .map(|s| s.parse::<Scenario>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ReportError::Invalid(e.to_string()))?;
            let plan = plan_groups(&corpus, &scenarios).map_err(|e| ReportError::Invalid(e.to_string()))?;
            planned_cells(&plan).into_iter().map(|c| c.to_string()).collect::<Vec<_>>()
        }
        _ => {
            warn!("corpus unavailable; checking completeness from records only");
            let mut groups: Vec<&str> = records.iter().map(|r| r.group_key.as_str()).collect();
            groups.sort_unstable();
            groups.dedup();
            let mut cells = Vec::new();
            for g in groups {
                for stage in ["independent", "deliberative"] {
                    for a in 0..3 {
                        cells.push(format!("{g}#{a}#{stage}"));
                    }
                }
            }
            cells
        }
    };
    Ok(planned.into_iter().filter(|c| !have.contains(c)).collect())
}

fn write(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    fs::write(path, text).map_err(|e| ReportError::Io(path.to_path_buf(), e))?;
    files.push(path.to_path_buf());
    Ok(())
}

/// Builds every table and figure for the run in `run_dir` under `out_dir`.
pub fn write_report(run_dir: &Path, out_dir: &Path, opts: ReportOptions) -> Result<ReportOutput, ReportError> {
    let manifest = read_manifest(run_dir)?;
    let records = read_records(&run_dir.join(RECORDS_FILE))?;
    let missing = missing_cells(&manifest, &records)?;
    if !missing.is_empty() {
        return Err(ReportError::Incomplete { missing });
    }
    let analysis = &manifest.config.analysis;
    let tables_dir = out_dir.join("tables");
    let figures_dir = out_dir.join("figures");
    for d in [&tables_dir, &figures_dir] {
        fs::create_dir_all(d).map_err(|e| ReportError::Io(d.to_path_buf(), e))?;
    }
    let mut files = Vec::new();

    let scores = score_groups(&records, analysis.epsilon)?;
    let logloss = scenario_table(&scores, Metric::LogLoss)?;
    let mde = mde_rows(&logloss, analysis.alpha, analysis.power)?;
    let mde_table = render_mde(&mde, analysis.power)?;
    let power = power_series(&mde, analysis.alpha)?;

    let mut rendered = vec![mde_table.clone()];
    let mut plots = vec![PlotData::Power(power)];
    let stdout;
    if opts.only_mde {
        stdout = mde_table.text.clone();
    } else {
        let brier = scenario_table(&scores, Metric::Brier)?;
        let ll_table = render_scenario_table(&logloss, Metric::LogLoss)?;
        let brier_table = render_scenario_table(&brier, Metric::Brier)?;
        stdout = match opts.metric {
            Metric::LogLoss => ll_table.text.clone(),
            Metric::Brier => brier_table.text.clone(),
        };
        rendered.push(ll_table);
        rendered.push(brier_table);
        rendered.push(render_model_breakdown(&model_breakdown(&scores, Metric::LogLoss)?)?);
        rendered.push(match info_regression_table(&records, analysis.epsilon) {
            Ok(arms) => render_info_regression(&arms, None)?,
            Err(ReportError::NoData(why)) => render_info_regression(&[], Some(&why))?,
            Err(e) => return Err(e),
        });
        plots.insert(0, PlotData::Calibration(calibration_panels(&scores, analysis.bin_count)?));
        write(&tables_dir.join("group_scores.csv"), &render_group_scores(&scores)?, &mut files)?;
    }
    for t in &rendered {
        write(&tables_dir.join(format!("{}.csv", t.name)), &t.csv, &mut files)?;
        write(&tables_dir.join(format!("{}.txt", t.name)), &t.text, &mut files)?;
    }
    files.extend(emit_plots(&plots, &figures_dir)?);
    let manifest_copy = out_dir.join(MANIFEST_FILE);
    fs::copy(run_dir.join(MANIFEST_FILE), &manifest_copy).map_err(|e| ReportError::Io(manifest_copy.clone(), e))?;
    files.push(manifest_copy);
    files.sort();
    Ok(ReportOutput {
        out_dir: out_dir.to_path_buf(),
        files,
        stdout,
    })
}
