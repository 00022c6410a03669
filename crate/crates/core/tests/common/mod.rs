//! Helpers shared by the integration tests: a scripted HTTP server,
//! independent numerical oracles and run fixtures.
#![allow(dead_code)]

pub mod mock;
pub mod oracles;

use std::path::{Path, PathBuf};

use delib_core::agents::{Backend, SimParams};
use delib_core::config::Config;
use delib_core::corpus::synthetic_corpus;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// Writes a synthetic corpus of `n` questions to `dir/corpus.jsonl`.
pub fn write_synthetic(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    synthetic_corpus(n, seed).save(&path).unwrap();
    path
}

/// Simulator config over a synthetic corpus in `dir`, run directory `dir/run`.
pub fn sim_config(dir: &Path, n: usize, seed: u64) -> Config {
    let corpus = write_synthetic(dir, n, seed);
    let mut cfg = Config::simulated(corpus, dir.join("run"), seed);
    cfg.retry.base_delay_ms = 1;
    cfg.retry.max_delay_ms = 2;
    cfg
}

/// Replaces one agent's simulator parameters.
pub fn set_sim(cfg: &mut Config, model: &str, params: SimParams) {
    cfg.agents.get_mut(model).unwrap().backend = Backend::Sim(params);
}
