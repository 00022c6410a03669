//! Declarative run configuration.
//!
//! A config names everything a run depends on except secrets: backends
//! refer to credentials by environment variable name only. The whole struct
//! is copied into the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::agents::{AgentSpec, Backend, ModelId, SimParams};
use crate::corpus::ApiSource;
use crate::protocol::Scenario;
use crate::retry::RetryPolicy;
use crate::scoring::{DEFAULT_BIN_COUNT, DEFAULT_EPSILON};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("unknown model id {0:?} in [agents]")]
    UnknownModel(String),
    #[error("no agent configured for {0}")]
    MissingAgent(ModelId),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("config names no corpus path")]
    NoCorpusPath,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Local corpus file (JSON Lines). `fetch` writes here.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub api: Option<ApiSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub backend: Backend,
    #[serde(default)]
    pub sampling: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_bins")]
    pub bin_count: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub power: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            bin_count: DEFAULT_BIN_COUNT,
            alpha: default_alpha(),
            power: default_power(),
        }
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_bins() -> usize {
    DEFAULT_BIN_COUNT
}
fn default_alpha() -> f64 {
    0.05
}
fn default_power() -> f64 {
    0.80
}
fn default_scenarios() -> Vec<String> {
    Scenario::PRIMARY.iter().map(Scenario::key).collect()
}
fn default_run_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<String>,
    /// Adds the two no-information arms used by the information regression.
    #[serde(default)]
    pub with_no_info_baseline: bool,
    /// Keyed by model id: GPT5, Sonnet, Pro.
    #[serde(default)]
    pub agents: BTreeMap<String, AgentEntry>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
    /// Upper bound on concurrent backend calls.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl Config {
    /// Parses TOML. Relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.corpus.path {
            if p.is_relative() {
                self.corpus.path = Some(base.join(p));
            }
        }
        if self.run_dir.is_relative() {
            self.run_dir = base.join(&self.run_dir);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn corpus_path(&self) -> Result<&Path, ConfigError> {
        self.corpus.path.as_deref().ok_or(ConfigError::NoCorpusPath)
    }

    /// Selected scenarios, followed by the baseline arms when enabled.
    pub fn scenario_list(&self) -> Result<Vec<Scenario>, ConfigError> {
        let mut out = Vec::new();
        for key in &self.scenarios {
            let s: Scenario = key.parse().map_err(|_| ConfigError::UnknownScenario(key.clone()))?;
            if !out.contains(&s) {
                out.push(s);
            }
        }
        if self.with_no_info_baseline {
            for s in Scenario::BASELINE {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        Ok(out)
    }

    /// Agent specs for the three panel models.
    pub fn agent_specs(&self) -> Result<BTreeMap<ModelId, AgentSpec>, ConfigError> {
        let mut specs = BTreeMap::new();
        for (key, entry) in &self.agents {
            let model_id = ModelId::parse(key).ok_or_else(|| ConfigError::UnknownModel(key.clone()))?;
            specs.insert(
                model_id,
                AgentSpec {
                    model_id,
                    backend: entry.backend.clone(),
                    sampling: entry.sampling.clone(),
                },
            );
        }
        for m in ModelId::PANEL {
            if !specs.contains_key(&m) {
                return Err(ConfigError::MissingAgent(m));
            }
        }
        Ok(specs)
    }

    /// A complete simulator configuration over `corpus_path`; handy for
    /// tests and smoke runs. The three agents differ in skill, noise and
    /// how far they move toward their peers.
    pub fn simulated(corpus_path: impl Into<PathBuf>, run_dir: impl Into<PathBuf>, seed: u64) -> Self {
        let params = [(1.0, 0.30, 1.0, 0.30), (0.9, 0.35, 1.1, 0.40), (1.1, 0.25, 0.9, 0.25)];
        let agents = ModelId::PANEL
            .iter()
            .zip(params)
            .enumerate()
            .map(|(i, (m, (base_skill, info_skill, noise_sd, peer_weight)))| {
                (
                    m.as_str().to_string(),
                    AgentEntry {
                        backend: Backend::Sim(SimParams {
                            base_skill,
                            info_skill,
                            bias: 0.0,
                            noise_sd,
                            peer_weight,
                            seed: i as u64 + 1,
                        }),
                        sampling: Map::new(),
                    },
                )
            })
            .collect();
        Config {
            corpus: CorpusConfig {
                path: Some(corpus_path.into()),
                api: None,
            },
            scenarios: default_scenarios(),
            with_no_info_baseline: false,
            agents,
            analysis: AnalysisConfig::default(),
            seed,
            run_dir: run_dir.into(),
            workers: default_workers(),
            retry: RetryPolicy::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::SimParams;

    const SAMPLE: &str = r#"
seed = 11
workers = 2
run_dir = "runs/a"

[corpus]
path = "data/corpus.jsonl"

[analysis]
epsilon = 0.01

[agents.GPT5.backend]
kind = "sim"
base_skill = 1.5
noise_sd = 0.5

[agents.Sonnet.backend]
kind = "http"
url = "https://example.invalid/v1/chat/completions"
model = "sonnet"
credential_env = "SONNET_KEY"

[agents.Sonnet.sampling]
temperature = 0.7

[agents.Pro.backend]
kind = "sim"
base_skill = 1.0
noise_sd = 1.0
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = Config::from_toml_str(SAMPLE, Path::new("/work")).unwrap();
        assert_eq!(cfg.corpus.path.as_deref(), Some(Path::new("/work/data/corpus.jsonl")));
        assert_eq!(cfg.run_dir, Path::new("/work/runs/a"));
        assert_eq!(cfg.analysis.epsilon, 0.01);
        assert_eq!(cfg.analysis.bin_count, 10);
        assert_eq!(cfg.scenario_list().unwrap(), Scenario::PRIMARY.to_vec());
        let specs = cfg.agent_specs().unwrap();
        match &specs[&ModelId::Gpt5].backend {
            Backend::Sim(p) => assert_eq!(
                p,
                &SimParams {
                    base_skill: 1.5,
                    noise_sd: 0.5,
                    info_skill: 0.0,
                    bias: 0.0,
                    peer_weight: 0.0,
                    seed: 0
                }
            ),
            other => panic!("{other:?}"),
        }
        assert_eq!(specs[&ModelId::Sonnet].sampling["temperature"], serde_json::json!(0.7));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = Config::from_toml_str(SAMPLE, Path::new("/work")).unwrap();
        let again = Config::from_toml_str(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn baseline_arms_are_opt_in() {
        let mut cfg = Config::simulated("c.jsonl", "r", 1);
        assert_eq!(cfg.scenario_list().unwrap().len(), 4);
        cfg.with_no_info_baseline = true;
        let list = cfg.scenario_list().unwrap();
        assert_eq!(list.len(), 6);
        assert_eq!(&list[4..], &Scenario::BASELINE);
    }

    #[test]
    fn rejects_unknown_names() {
        let mut cfg = Config::simulated("c.jsonl", "r", 1);
        cfg.scenarios.push("diverse_everything".into());
        assert!(matches!(cfg.scenario_list(), Err(ConfigError::UnknownScenario(_))));
        let mut cfg = Config::simulated("c.jsonl", "r", 1);
        cfg.agents.remove("Pro");
        assert!(matches!(cfg.agent_specs(), Err(ConfigError::MissingAgent(ModelId::Pro))));
        assert!(Config::from_toml_str("bogus = 1", Path::new(".")).is_err());
    }
}
