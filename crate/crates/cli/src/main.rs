//! `delib`: validate a config, fetch a corpus, run or resume the two-stage
//! protocol, and build the report.
//!
//! Exit codes: 0 success, 1 validation failure, 2 runtime failure,
//! 3 report requested on an incomplete run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use delib_core::config::Config;
use delib_core::pipeline::{self, has_errors, Diagnostic, PipelineError, RunOutcome};
use delib_core::protocol::{ProtocolError, RunOptions};
use delib_core::report::{write_report, ReportError, ReportOptions};
use delib_core::scoring::Metric;
use tracing_subscriber::EnvFilter;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(name = "delib", version, about = "Two-stage deliberative forecasting runs and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Logloss,
    Brier,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnlyArg {
    Mde,
}

#[derive(clap::Args)]
struct Overrides {
    /// Run directory (overrides the config).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Run seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Add the no-information arms needed by the information regression.
    #[arg(long)]
    with_no_info_baseline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config, corpus and backends without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Downgrade credential and reachability problems to warnings.
        #[arg(long)]
        offline: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Download resolved questions into the config's corpus path.
    Fetch {
        #[arg(long)]
        config: PathBuf,
        /// Keep raw API pages here.
        #[arg(long)]
        archive_dir: Option<PathBuf>,
    },
    /// Start a run, or continue the one already in the run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        offline: bool,
        #[command(flatten)]
        overrides: Overrides,
        /// Concurrent groups (overrides the config).
        #[arg(long)]
        workers: Option<usize>,
        /// Stop after committing this many records.
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Continue an interrupted run from its manifest.
    Resume {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Build tables and figure data from a completed run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        /// Output directory; defaults to <run-dir>/report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenario table printed to standard output.
        #[arg(long, value_enum, default_value = "logloss")]
        metric: MetricArg,
        /// Restrict output to one analysis.
        #[arg(long, value_enum)]
        only: Option<OnlyArg>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<Config, u8> {
    let mut cfg = Config::load(path).map_err(|e| {
        eprintln!("error[E_CONFIG]: {e}");
        EXIT_VALIDATION
    })?;
    if let Some(dir) = &overrides.run_dir {
        cfg.run_dir = dir.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if overrides.with_no_info_baseline {
        cfg.with_no_info_baseline = true;
    }
    Ok(cfg)
}

fn print_diagnostics(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{d}");
    }
}

fn dispatch(command: Command) -> Result<(), u8> {
    match command {
        Command::Validate {
            config,
            offline,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let diags = pipeline::validate(&cfg, offline);
            print_diagnostics(&diags);
            if has_errors(&diags) {
                return Err(EXIT_VALIDATION);
            }
            println!("config ok ({} warning(s))", diags.len());
            Ok(())
        }
        Command::Fetch { config, archive_dir } => {
            let cfg = load_config(&config, &Overrides::none())?;
            let (path, warnings) = pipeline::fetch(&cfg, archive_dir.as_deref()).map_err(runtime)?;
            for w in &warnings {
                eprintln!("warning[W_FETCH]: {w}");
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Run {
            config,
            offline,
            overrides,
            workers,
            stop_after,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let diags = pipeline::validate(&cfg, offline);
            print_diagnostics(&diags);
            if has_errors(&diags) {
                return Err(EXIT_VALIDATION);
            }
            let opts = RunOptions {
                workers: workers.unwrap_or(cfg.workers),
                stop_after,
            };
            let outcome = pipeline::run(&cfg, &opts).map_err(runtime)?;
            finish_run(&outcome)
        }
        Command::Resume {
            run_dir,
            workers,
            stop_after,
        } => {
            let manifest = delib_core::protocol::read_manifest(&run_dir).map_err(|e| runtime(e.into()))?;
            let opts = RunOptions {
                workers: workers.unwrap_or(manifest.config.workers),
                stop_after,
            };
            let outcome = pipeline::resume(&run_dir, &opts).map_err(runtime)?;
            finish_run(&outcome)
        }
        Command::Report {
            run_dir,
            out,
            metric,
            only,
        } => {
            let out = out.unwrap_or_else(|| run_dir.join("report"));
            let opts = ReportOptions {
                metric: match metric {
                    MetricArg::Logloss => Metric::LogLoss,
                    MetricArg::Brier => Metric::Brier,
                },
                only_mde: matches!(only, Some(OnlyArg::Mde)),
            };
            match write_report(&run_dir, &out, opts) {
                Ok(report) => {
                    print!("{}", report.stdout);
                    eprintln!("wrote {} file(s) under {}", report.files.len(), report.out_dir.display());
                    Ok(())
                }
                Err(ReportError::Incomplete { missing }) => {
                    eprintln!("error[E_RUN_INCOMPLETE]: {} cell(s) missing", missing.len());
                    for cell in missing.iter().take(50) {
                        eprintln!("  missing {cell}");
                    }
                    if missing.len() > 50 {
                        eprintln!("  ... and {} more", missing.len() - 50);
                    }
                    Err(EXIT_INCOMPLETE)
                }
                Err(e) => {
                    eprintln!("error[E_REPORT]: {e}");
                    Err(EXIT_RUNTIME)
                }
            }
        }
    }
}

impl Overrides {
    fn none() -> Self {
        Self {
            run_dir: None,
            seed: None,
            with_no_info_baseline: false,
        }
    }
}

fn finish_run(outcome: &RunOutcome) -> Result<(), u8> {
    let r = &outcome.report;
    println!(
        "run {} in {}: {} written, {} already present, {} of {} cells missing",
        outcome.manifest.run_id,
        outcome.run_dir.display(),
        r.written,
        r.already_present,
        r.missing.len(),
        r.planned_cells
    );
    if r.is_complete() {
        return Ok(());
    }
    if r.interrupted {
        eprintln!("error[E_RUN_INTERRUPTED]: stopped early; rerun or resume to finish");
    } else {
        eprintln!(
            "error[E_RUN_INCOMPLETE]: {} cell(s) failed; see failures.jsonl and resume to retry",
            r.failed.len()
        );
    }
    Err(EXIT_RUNTIME)
}

fn error_code(e: &PipelineError) -> &'static str {
    match e {
        PipelineError::Config(_) => "E_CONFIG",
        PipelineError::Corpus(_) => "E_CORPUS_INVALID",
        PipelineError::Protocol(ProtocolError::DigestMismatch { .. }) => "E_DIGEST_MISMATCH",
        PipelineError::Protocol(_) => "E_PROTOCOL",
        PipelineError::Store(_) => "E_STORE",
        PipelineError::ConfigMismatch(_) => "E_CONFIG_MISMATCH",
        PipelineError::NoApiSource => "E_CONFIG",
        PipelineError::MissingCredential(_) => "E_CREDENTIAL_MISSING",
    }
}

fn runtime(e: PipelineError) -> u8 {
    eprintln!("error[{}]: {e}", error_code(&e));
    EXIT_RUNTIME
}
