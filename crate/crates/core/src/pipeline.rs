//! End-to-end operations behind the command line: validate a config, fetch
//! a corpus, start or resume a run.

use std::fmt;
use std::fs;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Utc;
use serde::Serialize;
use thiserror::Error;
use tracing::info;

use crate::agents::{AgentRuntime, Backend};
use crate::config::{Config, ConfigError};
use crate::corpus::{corpus_digest, fetch_questions, Corpus, CorpusError, Credential, InfoLevel, LoadOptions};
use crate::protocol::{
    plan_groups, read_manifest, CompletionReport, ProtocolError, RunManifest, RunOptions, RunStore, Runner,
    StoreError,
};

pub const SOFTWARE_VERSION: &str = concat!("delib-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("config differs from the one recorded in {0}; use a new run directory")]
    ConfigMismatch(PathBuf),
    #[error("config has no [corpus.api] source")]
    NoApiSource,
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
}

/// Reads a corpus file once, returning the parsed corpus and the digest of
/// its exact bytes.
pub fn load_corpus_with_digest(path: &Path) -> Result<(Corpus, String), CorpusError> {
    let bytes = fs::read(path)?;
    let digest = corpus_digest(&bytes);
    let text = String::from_utf8(bytes).map_err(|e| CorpusError::Malformed {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    Ok((Corpus::parse(&text, LoadOptions::default())?, digest))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub report: CompletionReport,
    pub resumed: bool,
}

/// Fields that do not affect results are ignored when checking that a
/// rerun matches the recorded config.
fn comparable(cfg: &Config) -> Config {
    let mut c = cfg.clone();
    c.run_dir = PathBuf::new();
    c.workers = 0;
    c
}

/// Starts a run in `config.run_dir`, or continues the run already there.
pub fn run(config: &Config, opts: &RunOptions) -> Result<RunOutcome, PipelineError> {
    let run_dir = config.run_dir.clone();
    let (corpus, digest) = load_corpus_with_digest(config.corpus_path()?)?;
    let scenarios = config.scenario_list()?;
    config.agent_specs()?;
    let (store, resumed) = match read_manifest(&run_dir) {
        Ok(m) => {
            check_digest(&m, &digest)?;
            if comparable(&m.config) != comparable(config) {
                return Err(PipelineError::ConfigMismatch(run_dir));
            }
            (RunStore::open(&run_dir)?, true)
        }
        Err(StoreError::NoManifest(_)) => {
            let started_at = Utc::now();
            let manifest = RunManifest {
                run_id: format!("{}-{}", started_at.format("%Y%m%dT%H%M%SZ"), &digest[..8]),
                corpus_digest: digest.clone(),
                scenarios: scenarios.iter().map(|s| s.key()).collect(),
                config: config.clone(),
                seed: config.seed,
                started_at,
                finished_at: None,
                software_version: SOFTWARE_VERSION.to_string(),
            };
            (RunStore::create(&run_dir, &manifest)?, false)
        }
        Err(e) => return Err(e.into()),
    };
    execute(store, &corpus, opts, resumed)
}

/// Continues the run in `run_dir` using its recorded config. The corpus
/// must still hash to the recorded digest.
pub fn resume(run_dir: &Path, opts: &RunOptions) -> Result<RunOutcome, PipelineError> {
    let manifest = read_manifest(run_dir)?;
    let (corpus, digest) = load_corpus_with_digest(manifest.config.corpus_path()?)?;
    check_digest(&manifest, &digest)?;
    let store = RunStore::open(run_dir)?;
    execute(store, &corpus, opts, true)
}

fn check_digest(manifest: &RunManifest, digest: &str) -> Result<(), ProtocolError> {
    if manifest.corpus_digest != digest {
        return Err(ProtocolError::DigestMismatch {
            expected: manifest.corpus_digest.clone(),
            found: digest.to_string(),
        });
    }
    Ok(())
}

fn execute(store: RunStore, corpus: &Corpus, opts: &RunOptions, resumed: bool) -> Result<RunOutcome, PipelineError> {
    let mut manifest = store.manifest()?;
    let config = &manifest.config;
    let scenarios = manifest
        .scenarios
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    let agents = config.agent_specs()?;
    let plan = plan_groups(corpus, &scenarios)?;
    let runtime = AgentRuntime::new(config.retry.clone(), config.seed);
    let report = Runner::new(corpus, &agents, &runtime, &store).execute(&plan, opts)?;
    info!(
        written = report.written,
        missing = report.missing.len(),
        failed = report.failed.len(),
        "run pass finished"
    );
    if report.is_complete() && manifest.finished_at.is_none() {
        manifest.finished_at = Some(Utc::now());
        store.write_manifest(&manifest)?;
    }
    Ok(RunOutcome {
        run_dir: store.dir().to_path_buf(),
        manifest,
        report,
        resumed,
    })
}

/// Downloads resolved binary questions from the configured API and writes
/// them to the config's corpus path. Raw pages go to `archive_dir`.
pub fn fetch(config: &Config, archive_dir: Option<&Path>) -> Result<(PathBuf, Vec<String>), PipelineError> {
    let source = config.corpus.api.as_ref().ok_or(PipelineError::NoApiSource)?;
    let out = config.corpus_path()?.to_path_buf();
    let credential = Credential::from_env(&source.credential_env)
        .ok_or_else(|| PipelineError::MissingCredential(source.credential_env.clone()))?;
    let report = fetch_questions(source, &credential, &config.retry, archive_dir)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(CorpusError::from)?;
    }
    report.corpus.save(&out)?;
    Ok((out, report.warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}[{}]: {}", self.code, self.message)
    }
}

fn error(code: &'static str, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        code,
        severity: Severity::Error,
        message: message.into(),
    }
}

fn warning(code: &'static str, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        code,
        severity: Severity::Warning,
        message: message.into(),
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

const SECRET_HINTS: [&str; 9] = [
    "key", "apikey", "token", "secret", "password", "authorization", "auth", "bearer", "credential",
];

/// Whether a sampling key names a credential. Matches whole segments so
/// `max_tokens` passes and `api_key` does not.
fn looks_secret(key: &str) -> bool {
    key.to_ascii_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .any(|seg| SECRET_HINTS.contains(&seg))
}

/// Checks a config and its corpus without running anything. With
/// `offline`, credential and reachability problems are warnings.
pub fn validate(config: &Config, offline: bool) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let mut scenarios = Vec::new();
    for key in &config.scenarios {
        match key.parse::<crate::protocol::Scenario>() {
            Ok(s) => scenarios.push(s),
            Err(_) => out.push(error("E_SCENARIO_UNKNOWN", format!("unknown scenario {key:?}"))),
        }
    }
    if config.scenarios.is_empty() && !config.with_no_info_baseline {
        out.push(error("E_SCENARIO_EMPTY", "no scenarios selected"));
    }
    if let Ok(list) = config.scenario_list() {
        scenarios = list;
    }

    let a = &config.analysis;
    if !(a.epsilon > 0.0 && a.epsilon < 0.5) {
        out.push(error("E_PARAM_RANGE", format!("epsilon {} outside (0, 0.5)", a.epsilon)));
    }
    if a.bin_count < 2 {
        out.push(error("E_PARAM_RANGE", format!("bin_count {} below 2", a.bin_count)));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        out.push(error("E_PARAM_RANGE", format!("alpha {} outside (0, 1)", a.alpha)));
    }
    if !(a.power > 0.0 && a.power < 1.0) {
        out.push(error("E_PARAM_RANGE", format!("power {} outside (0, 1)", a.power)));
    }
    if config.workers == 0 {
        out.push(error("E_PARAM_RANGE", "workers must be at least 1"));
    }

    match config.agent_specs() {
        Err(ConfigError::UnknownModel(m)) => out.push(error("E_AGENT_UNKNOWN", format!("unknown model id {m:?}"))),
        Err(e) => out.push(error("E_AGENT_MISSING", e.to_string())),
        Ok(specs) => {
            for spec in specs.values() {
                for k in spec.sampling.keys() {
                    if looks_secret(k) {
                        out.push(error(
                            "E_SECRET_IN_CONFIG",
                            format!("{}: sampling key {k:?} looks like a credential; use credential_env", spec.model_id),
                        ));
                    }
                }
                match &spec.backend {
                    Backend::Sim(p) => {
                        if !(p.noise_sd >= 0.0 && p.noise_sd.is_finite()) {
                            out.push(error("E_SIM_PARAM", format!("{}: noise_sd must be >= 0", spec.model_id)));
                        }
                        if !(0.0..=1.0).contains(&p.peer_weight) {
                            out.push(error("E_SIM_PARAM", format!("{}: peer_weight outside [0, 1]", spec.model_id)));
                        }
                    }
                    Backend::Http(ep) => {
                        let soft = |code_err, code_warn, msg: String| {
                            if offline {
                                warning(code_warn, msg)
                            } else {
                                error(code_err, msg)
                            }
                        };
                        if Credential::from_env(&ep.credential_env).is_none() {
                            out.push(soft(
                                "E_CREDENTIAL_MISSING",
                                "W_CREDENTIAL_MISSING",
                                format!("{}: environment variable {} is not set", spec.model_id, ep.credential_env),
                            ));
                        }
                        if let Err(why) = probe(&ep.url) {
                            out.push(soft(
                                "E_BACKEND_UNREACHABLE",
                                "W_BACKEND_UNREACHABLE",
                                format!("{}: {} unreachable: {why}", spec.model_id, ep.url),
                            ));
                        }
                    }
                }
            }
        }
    }

    let path = match config.corpus_path() {
        Ok(p) => p,
        Err(_) => {
            out.push(error("E_CORPUS_PATH", "config names no corpus path"));
            return out;
        }
    };
    let corpus = match load_corpus_with_digest(path) {
        Ok((c, _)) => c,
        Err(CorpusError::Io(e)) => {
            out.push(error("E_CORPUS_READ", format!("{}: {e}", path.display())));
            return out;
        }
        Err(e) => {
            out.push(error("E_CORPUS_INVALID", format!("{}: {e}", path.display())));
            return out;
        }
    };
    if corpus.is_empty() {
        out.push(error("E_CORPUS_EMPTY", format!("{} holds no questions", path.display())));
    }
    let needs_info = scenarios.iter().any(|s| s.info != InfoLevel::None);
    let missing = corpus.missing_info();
    if needs_info && !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(5).copied().collect();
        out.push(error(
            "E_INFO_MISSING",
            format!(
                "{} question(s) lack information units required by the selected scenarios (e.g. {})",
                missing.len(),
                shown.join(", ")
            ),
        ));
    }
    out
}

/// Dry-run reachability: resolve the endpoint's host and open a TCP
/// connection, sending nothing.
fn probe(endpoint: &str) -> Result<(), String> {
    let url = url::Url::parse(endpoint).map_err(|e| e.to_string())?;
    let host = url.host_str().ok_or("no host")?;
    let port = url.port_or_known_default().ok_or("no port")?;
    let addrs: Vec<_> = (host, port).to_socket_addrs().map_err(|e| e.to_string())?.collect();
    let mut last = String::from("no addresses");
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, Duration::from_secs(3)) {
            Ok(_) => return Ok(()),
            Err(e) => last = e.to_string(),
        }
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secret_keys_match_whole_segments() {
        for k in ["api_key", "apikey", "Authorization", "bearer_token", "password"] {
            assert!(looks_secret(k), "{k}");
        }
        assert!(looks_secret("x-api-key"));
        for k in ["max_tokens", "temperature", "top_k", "keywords", "reasoning_effort"] {
            assert!(!looks_secret(k), "{k}");
        }
    }
}
