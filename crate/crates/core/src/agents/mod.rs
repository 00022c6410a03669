//! Forecasting agents: prompt rendering, backend invocation and response
//! parsing behind one interface.

mod http;
pub mod parse;
pub mod prompt;
pub mod sim;

pub use http::{ApiStyle, HttpEndpoint};
pub use parse::parse_response;
pub use prompt::{
    render_stage1, render_stage2, stage2_conversation, ChatMessage, Prompt, Role, StageOnePrompt,
    StageTwoPrompt,
};
pub use sim::{SimCall, SimParams};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::{Credential, Question};
use crate::retry::{Attempted, RetryPolicy, Retryable, TokenBucket};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("template error: {0}")]
    Template(String),
    #[error("missing peer input: {0}")]
    MissingPeer(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("probability out of range: {0}")]
    ProbabilityOutOfRange(f64),
    #[error("empty rationale")]
    EmptyRationale,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned HTTP {code}")]
    Status { code: u16, body: String },
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
}

impl Retryable for AgentError {
    fn is_retryable(&self) -> bool {
        match self {
            AgentError::Parse(_)
            | AgentError::ProbabilityOutOfRange(_)
            | AgentError::EmptyRationale
            | AgentError::Transport(_) => true,
            AgentError::Status { code, .. } => *code == 429 || *code >= 500,
            AgentError::Template(_) | AgentError::MissingPeer(_) | AgentError::MissingCredential(_) => {
                false
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "GPT5")]
    Gpt5,
    Sonnet,
    Pro,
    Sim,
}

impl ModelId {
    /// The three group members of a diverse group, in member order.
    pub const PANEL: [ModelId; 3] = [ModelId::Gpt5, ModelId::Sonnet, ModelId::Pro];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Gpt5 => "GPT5",
            ModelId::Sonnet => "Sonnet",
            ModelId::Pro => "Pro",
            ModelId::Sim => "Sim",
        }
    }

    /// Label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelId::Gpt5 => "GPT-5",
            other => other.as_str(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "GPT5" | "GPT-5" | "gpt5" => Some(ModelId::Gpt5),
            "Sonnet" | "sonnet" => Some(ModelId::Sonnet),
            "Pro" | "pro" => Some(ModelId::Pro),
            "Sim" | "sim" => Some(ModelId::Sim),
            _ => None,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Independent,
    Deliberative,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Independent => "independent",
            Stage::Deliberative => "deliberative",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Sim(SimParams),
    Http(HttpEndpoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub model_id: ModelId,
    pub backend: Backend,
    /// Generation parameters passed to the backend unchanged.
    #[serde(default)]
    pub sampling: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    /// As emitted, on the 0-100 scale.
    pub probability: f64,
    pub rationale: String,
    pub structured_fields: BTreeMap<String, String>,
    pub raw: String,
}

/// Facts about the call that a simulated backend needs; remote backends
/// only see the rendered messages.
#[derive(Debug, Clone, Copy)]
pub struct CallContext<'a> {
    pub question: &'a Question,
    pub agent_index: usize,
    pub stage: Stage,
    pub units_seen: usize,
    pub peer_probs: Option<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub response: AgentResponse,
    /// Reply text as the model wrote it; the assistant turn in later context.
    pub reply: String,
    pub attempts: u32,
    pub latency_ms: u64,
    /// Error text of every failed attempt before success.
    pub failed_attempts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct InvokeFailure {
    pub error: AgentError,
    pub attempts: u32,
    pub failed_attempts: Vec<String>,
}

impl fmt::Display for InvokeFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} attempts)", self.error, self.attempts)
    }
}

/// Shared invocation machinery: retry policy, per-backend rate limiters and
/// a pooled HTTP client. Safe to use from many threads.
pub struct AgentRuntime {
    retry: RetryPolicy,
    run_seed: u64,
    limiters: Mutex<HashMap<String, Arc<TokenBucket>>>,
    http: ureq::Agent,
}

impl AgentRuntime {
    pub fn new(retry: RetryPolicy, run_seed: u64) -> Self {
        Self {
            retry,
            run_seed,
            limiters: Mutex::new(HashMap::new()),
            http: http::build_agent(300),
        }
    }

    fn limiter(&self, endpoint: &HttpEndpoint) -> Option<Arc<TokenBucket>> {
        let per_minute = endpoint.rate_limit_per_minute?;
        let mut map = self.limiters.lock().expect("limiter map poisoned");
        Some(
            map.entry(endpoint.limiter_key())
                .or_insert_with(|| Arc::new(TokenBucket::per_minute(per_minute)))
                .clone(),
        )
    }

    /// Sends `context` followed by `prompt` to the agent's backend and
    /// parses the reply for `ctx.stage`. Transport and parse failures are
    /// retried per the runtime's policy.
    pub fn invoke(
        &self,
        agent: &AgentSpec,
        prompt: &Prompt,
        context: &[ChatMessage],
        ctx: &CallContext<'_>,
    ) -> Result<Invocation, InvokeFailure> {
        let started = Instant::now();
        let mut failed = Vec::new();
        let result = match &agent.backend {
            Backend::Sim(params) => {
                let call = SimCall {
                    model_id: agent.model_id,
                    question: ctx.question,
                    agent_index: ctx.agent_index,
                    units_seen: ctx.units_seen,
                    peer_probs: ctx.peer_probs,
                    run_seed: self.run_seed,
                };
                let raw = sim::simulate(params, &call, ctx.stage);
                parse_response(&raw, ctx.stage)
                    .map(|r| Attempted {
                        value: (r, raw.clone()),
                        attempts: 1,
                    })
                    .map_err(|value| Attempted { value, attempts: 1 })
            }
            Backend::Http(endpoint) => {
                let key = match Credential::from_env(&endpoint.credential_env) {
                    Some(k) => k,
                    None => {
                        return Err(InvokeFailure {
                            error: AgentError::MissingCredential(endpoint.credential_env.clone()),
                            attempts: 0,
                            failed_attempts: Vec::new(),
                        })
                    }
                };
                let mut messages = context.to_vec();
                messages.push(ChatMessage::user(prompt.rendered()));
                let body = http::request_body(endpoint, &messages, &agent.sampling);
                let limiter = self.limiter(endpoint);
                self.retry.run(|_| {
                    if let Some(l) = &limiter {
                        l.acquire();
                    }
                    let r = http::call(&self.http, endpoint, key.expose(), &body).and_then(|(raw, text)| {
                        let mut parsed = parse_response(&text, ctx.stage)?;
                        parsed.raw = raw;
                        Ok((parsed, text))
                    });
                    if let Err(e) = &r {
                        failed.push(e.to_string());
                    }
                    r
                })
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        match result {
            Ok(ok) => Ok(Invocation {
                response: ok.value.0,
                reply: ok.value.1,
                attempts: ok.attempts,
                latency_ms,
                failed_attempts: failed,
            }),
            Err(err) => {
                if failed.is_empty() {
                    failed.push(err.value.to_string());
                }
                Err(InvokeFailure {
                    error: err.value,
                    attempts: err.attempts,
                    failed_attempts: failed,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_id_serde_names() {
        assert_eq!(serde_json::to_string(&ModelId::Gpt5).unwrap(), "\"GPT5\"");
        assert_eq!(ModelId::parse("GPT-5"), Some(ModelId::Gpt5));
        assert_eq!(ModelId::Gpt5.display_name(), "GPT-5");
    }

    #[test]
    fn retry_classification() {
        assert!(AgentError::Status { code: 503, body: String::new() }.is_retryable());
        assert!(!AgentError::Status { code: 401, body: String::new() }.is_retryable());
        assert!(AgentError::ProbabilityOutOfRange(103.0).is_retryable());
        assert!(!AgentError::MissingCredential("X".into()).is_retryable());
    }
}
