//! Figure data: calibration panels and power curves, written as CSV with a
//! small hand-drawn SVG alongside.
//!
//! The CSV files are the contract. Calibration points sit at the mean
//! predicted probability of each bin; empty bins are left blank and break
//! the line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::tables::{GroupScore, MdeRow};
use super::ReportError;
use crate::agents::Stage;
use crate::protocol::Scenario;
use crate::scoring::{calibration, CalibrationCurve};
use crate::stats::{power_curve, PowerCurve};

pub const CALIBRATION_CONVENTION: &str = "x = mean predicted probability within bin; y = observed frequency; empty bins omitted";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationPanel {
    pub scenario: Scenario,
    /// Independent then deliberative.
    pub curves: Vec<CalibrationCurve>,
}

impl CalibrationPanel {
    pub fn file_stem(&self) -> String {
        format!("calibration_{}", self.scenario.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerSeries {
    pub scenario: Scenario,
    pub curve: PowerCurve,
    pub mde: f64,
    pub observed_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PlotData {
    Calibration(Vec<CalibrationPanel>),
    Power(Vec<PowerSeries>),
}

impl PlotData {
    pub fn kind(&self) -> &'static str {
        match self {
            PlotData::Calibration(_) => "calibration",
            PlotData::Power(_) => "power",
        }
    }
}

/// One panel per primary scenario with an independent and a deliberative
/// curve over group median forecasts.
pub fn calibration_panels(scores: &[GroupScore], bin_count: usize) -> Result<Vec<CalibrationPanel>, ReportError> {
    let mut panels = Vec::new();
    for scenario in Scenario::PRIMARY {
        let mut curves = Vec::new();
        for stage in [Stage::Independent, Stage::Deliberative] {
            let forecasts: Vec<(f64, u8)> = scores
                .iter()
                .filter(|s| s.scenario == scenario && s.stage == stage)
                .map(|s| (s.median_p, s.outcome))
                .collect();
            if forecasts.is_empty() {
                continue;
            }
            curves.push(CalibrationCurve {
                label: stage.as_str().to_string(),
                bins: calibration(&forecasts, bin_count)?,
            });
        }
        if !curves.is_empty() {
            panels.push(CalibrationPanel { scenario, curves });
        }
    }
    Ok(panels)
}

/// Effect grid shared by all curves, with each curve's MDE and observed
/// effect inserted so both can be read off exactly.
fn effect_grid(max: f64, extra: &[f64]) -> Vec<f64> {
    let steps = 200;
    let mut grid: Vec<f64> = (0..=steps).map(|i| max * i as f64 / steps as f64).collect();
    grid.extend(extra.iter().map(|e| e.abs()));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Power against effect size for each scenario with a nonzero SD of change.
pub fn power_series(rows: &[MdeRow], alpha: f64) -> Result<Vec<PowerSeries>, ReportError> {
    let usable: Vec<&MdeRow> = rows.iter().filter(|r| r.sd_of_change > 0.0 && r.mde.is_finite()).collect();
    let max = usable
        .iter()
        .map(|r| (2.5 * r.mde).max(1.2 * r.observed_effect.abs()))
        .fold(0.0_f64, f64::max);
    let mut out = Vec::new();
    for r in usable {
        let grid = effect_grid(max, &[r.mde, r.observed_effect]);
        out.push(PowerSeries {
            scenario: r.scenario,
            curve: power_curve(r.sd_of_change, r.n, alpha, &grid)?,
            mde: r.mde,
            observed_effect: r.observed_effect,
        });
    }
    Ok(out)
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v}"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    fs::write(path, contents).map_err(|e| ReportError::Io(path.to_path_buf(), e))
}

/// Writes one CSV per panel and one SVG per figure into `outdir`.
pub fn emit_plots(plots: &[PlotData], outdir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(outdir).map_err(|e| ReportError::Io(outdir.to_path_buf(), e))?;
    let mut written = Vec::new();
    for plot in plots {
        match plot {
            PlotData::Calibration(panels) => {
                for panel in panels {
                    let mut csv = String::from("stage,bin_lower,bin_upper,mean_predicted,observed_frequency,count\n");
                    for curve in &panel.curves {
                        for b in &curve.bins {
                            let _ = writeln!(
                                csv,
                                "{},{},{},{},{},{}",
                                curve.label,
                                b.lower,
                                b.upper,
                                opt(b.mean_predicted),
                                opt(b.observed_frequency),
                                b.count
                            );
                        }
                    }
                    let path = outdir.join(format!("{}.csv", panel.file_stem()));
                    write_file(&path, &csv)?;
                    written.push(path);
                }
                let path = outdir.join("calibration.svg");
                write_file(&path, &calibration_svg(panels))?;
                written.push(path);
            }
            PlotData::Power(series) => {
                let mut csv = String::from("scenario,sd_of_change,n,effect,power,marker\n");
                for s in series {
                    for &(e, p) in &s.curve.points {
                        let marker = if e == s.mde {
                            "mde"
                        } else if e == s.observed_effect.abs() {
                            "observed"
                        } else {
                            ""
                        };
                        let _ = writeln!(
                            csv,
                            "{},{},{},{},{},{}",
                            s.scenario.key(),
                            s.curve.sd_of_change,
                            s.curve.n,
                            e,
                            p,
                            marker
                        );
                    }
                }
                let path = outdir.join("power.csv");
                write_file(&path, &csv)?;
                written.push(path);
                let path = outdir.join("power.svg");
                write_file(&path, &power_svg(series))?;
                written.push(path);
            }
        }
    }
    Ok(written)
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const PANEL: f64 = 300.0;
const MARGIN: f64 = 50.0;

struct Frame {
    x0: f64,
    y0: f64,
    xmax: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.x0 + PANEL * v / self.xmax
    }
    fn y(&self, v: f64) -> f64 {
        self.y0 + PANEL * (1.0 - v)
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, y0) = (self.x0, self.y0);
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#333"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
            x0 + PANEL / 2.0,
            y0 - 10.0,
            escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            x0 + PANEL / 2.0,
            y0 + PANEL + 32.0,
            escape(xlabel)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            x0 - 34.0,
            y0 + PANEL / 2.0,
            x0 - 34.0,
            y0 + PANEL / 2.0,
            escape(ylabel)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.xmax * f;
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9">{}</text>"#,
                self.x(xv),
                y0 + PANEL + 14.0,
                trim_num(xv)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="9">{}</text>"#,
                x0 - 4.0,
                self.y(f) + 3.0,
                trim_num(f)
            );
        }
    }
}

fn trim_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(svg: &mut String, pts: &[(f64, f64)], color: &str, dash: bool) {
    if pts.len() < 2 {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dash { r#" stroke-dasharray="4 3""# } else { "" };
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
        coords.join(" ")
    );
}

fn header(width: f64, height: f64, desc: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, "<desc>{}</desc>", escape(desc));
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    svg
}

pub fn calibration_svg(panels: &[CalibrationPanel]) -> String {
    let cols = 2usize;
    let rows = panels.len().div_ceil(cols).max(1);
    let cell = PANEL + 2.0 * MARGIN;
    let width = cols as f64 * cell;
    let height = rows as f64 * cell + 30.0;
    let mut svg = header(width, height, CALIBRATION_CONVENTION);
    for (i, panel) in panels.iter().enumerate() {
        let frame = Frame {
            x0: (i % cols) as f64 * cell + MARGIN,
            y0: (i / cols) as f64 * cell + MARGIN,
            xmax: 1.0,
        };
        frame.axes(&mut svg, &panel.scenario.label(), "Predicted probability", "Observed frequency");
        polyline(&mut svg, &[(frame.x(0.0), frame.y(0.0)), (frame.x(1.0), frame.y(1.0))], "#999", true);
        for (c, curve) in panel.curves.iter().enumerate() {
            let color = COLORS[c % COLORS.len()];
            let mut segment = Vec::new();
            for b in &curve.bins {
                match (b.mean_predicted, b.observed_frequency) {
                    (Some(x), Some(y)) => {
                        let pt = (frame.x(x), frame.y(y));
                        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, pt.0, pt.1);
                        segment.push(pt);
                    }
                    _ => {
                        polyline(&mut svg, &segment, color, false);
                        segment.clear();
                    }
                }
            }
            polyline(&mut svg, &segment, color, false);
        }
    }
    let legend_y = height - 12.0;
    for (c, name) in ["independent", "deliberative"].iter().enumerate() {
        let x = MARGIN + c as f64 * 140.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="4" fill="{}"/><text x="{:.2}" y="{legend_y:.2}" font-size="11">{name}</text>"#,
            legend_y - 6.0,
            COLORS[c],
            x + 16.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn power_svg(series: &[PowerSeries]) -> String {
    let width = PANEL + 2.0 * MARGIN + 260.0;
    let height = PANEL + 2.0 * MARGIN;
    let mut svg = header(width, height, "power of the two-sided paired test against effect size; dots mark observed effects; dashed line at 0.80");
    let xmax = series
        .iter()
        .flat_map(|s| s.curve.points.last().map(|p| p.0))
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let frame = Frame {
        x0: MARGIN,
        y0: MARGIN,
        xmax,
    };
    frame.axes(&mut svg, "Power by scenario", "Effect size (absolute change)", "Power");
    polyline(&mut svg, &[(frame.x(0.0), frame.y(0.8)), (frame.x(xmax), frame.y(0.8))], "#999", true);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> = s.curve.points.iter().map(|&(e, p)| (frame.x(e), frame.y(p))).collect();
        polyline(&mut svg, &pts, color, false);
        if let Some(&(e, p)) = s.curve.points.iter().find(|(e, _)| *e == s.observed_effect.abs()) {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                frame.x(e),
                frame.y(p)
            );
        }
        let ly = MARGIN + 14.0 + 18.0 * i as f64;
        let lx = MARGIN + PANEL + 20.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="4" fill="{color}"/><text x="{:.2}" y="{ly:.2}" font-size="11">{}</text>"#,
            ly - 6.0,
            lx + 16.0,
            escape(&s.scenario.label())
        );
    }
    svg.push_str("</svg>\n");
    svg
}
