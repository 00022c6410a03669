//! Question ingestion from a forecasting-platform HTTP API.
//!
//! Pages through `GET {base}/posts/?tournaments=..&statuses=resolved&forecast_type=binary`
//! following the `next` link. Raw page bodies are archived before parsing.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Corpus, CorpusError, Question};
use crate::retry::{RetryPolicy, Retryable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSource {
    pub base_url: String,
    pub tournament_id: String,
    /// Name of the environment variable holding the bearer token.
    pub credential_env: String,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
}

fn default_page_size() -> usize {
    100
}

/// Bearer secret. Never printed.
#[derive(Clone)]
pub struct Credential(String);

impl Credential {
    pub fn new(secret: impl Into<String>) -> Self {
        Self(secret.into())
    }

    pub fn from_env(var: &str) -> Option<Self> {
        std::env::var(var).ok().filter(|s| !s.is_empty()).map(Self)
    }

    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Credential(***)")
    }
}

#[derive(Debug)]
pub struct FetchReport {
    pub corpus: Corpus,
    pub warnings: Vec<String>,
    /// Retries across all pages (attempts beyond the first).
    pub retries: u32,
    pub pages: usize,
}

#[derive(Debug)]
enum HttpFailure {
    Status(u16, String),
    Transport(String),
}

impl Retryable for HttpFailure {
    fn is_retryable(&self) -> bool {
        match self {
            HttpFailure::Status(code, _) => *code == 429 || *code >= 500,
            HttpFailure::Transport(_) => true,
        }
    }
}

impl fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HttpFailure::Status(code, body) => write!(f, "HTTP {code}: {}", truncate(body, 200)),
            HttpFailure::Transport(msg) => write!(f, "transport: {msg}"),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn get_page(agent: &ureq::Agent, url: &str, cred: &Credential) -> Result<String, HttpFailure> {
    let mut resp = agent
        .get(url)
        .header("Authorization", &format!("Bearer {}", cred.expose()))
        .header("Accept", "application/json")
        .call()
        .map_err(|e| HttpFailure::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| HttpFailure::Transport(e.to_string()))?;
    if (200..300).contains(&status) {
        Ok(body)
    } else {
        Err(HttpFailure::Status(status, body))
    }
}

/// Fetches resolved binary questions for a tournament. Unresolved or
/// non-binary posts are skipped with a warning. When `archive_dir` is given,
/// each raw page is written there as `page-NNNN.json`.
pub fn fetch_questions(
    source: &ApiSource,
    credential: &Credential,
    retry: &RetryPolicy,
    archive_dir: Option<&Path>,
) -> Result<FetchReport, CorpusError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(60)))
        .http_status_as_error(false)
        .build()
        .into();
    if let Some(dir) = archive_dir {
        fs::create_dir_all(dir)?;
    }
    let base = source.base_url.trim_end_matches('/');
    let mut next = Some(format!(
        "{base}/posts/?tournaments={}&statuses=resolved&forecast_type=binary&limit={}&offset=0",
        source.tournament_id, source.page_size
    ));
    let mut questions = Vec::new();
    let mut warnings = Vec::new();
    let mut retries = 0;
    let mut pages = 0;
    while let Some(url) = next.take() {
        let body = match retry.run(|_| get_page(&agent, &url, credential)) {
            Ok(ok) => {
                retries += ok.attempts - 1;
                ok.value
            }
            Err(failed) => {
                return Err(CorpusError::Http(format!(
                    "{} after {} attempts",
                    failed.value, failed.attempts
                )))
            }
        };
        pages += 1;
        if let Some(dir) = archive_dir {
            fs::write(dir.join(format!("page-{pages:04}.json")), &body)?;
        }
        let page: Value =
            serde_json::from_str(&body).map_err(|e| CorpusError::Payload(e.to_string()))?;
        let results = page
            .get("results")
            .and_then(Value::as_array)
            .ok_or_else(|| CorpusError::Payload("missing results array".into()))?;
        for post in results {
            match parse_post(post)? {
                Ok(q) => questions.push(q),
                Err(w) => {
                    tracing::warn!("{w}");
                    warnings.push(w);
                }
            }
        }
        next = page
            .get("next")
            .and_then(Value::as_str)
            .filter(|s| !s.is_empty())
            .map(str::to_string);
    }
    Ok(FetchReport {
        corpus: Corpus::new(questions, Vec::new())?,
        warnings,
        retries,
        pages,
    })
}

/// Outer error: the payload is unusable. Inner error: skip with a warning.
fn parse_post(post: &Value) -> Result<Result<Question, String>, CorpusError> {
    let id = match post.get("id") {
        Some(Value::Number(n)) => n.to_string(),
        Some(Value::String(s)) => s.clone(),
        _ => return Err(CorpusError::Payload("post without id".into())),
    };
    let q = post
        .get("question")
        .ok_or_else(|| CorpusError::Payload(format!("post {id} has no question")))?;
    let text = |key: &str| q.get(key).and_then(Value::as_str).unwrap_or("").to_string();
    let kind = text("type");
    if !kind.is_empty() && kind != "binary" {
        return Ok(Err(format!("post {id}: skipping non-binary question ({kind})")));
    }
    let outcome = match q.get("resolution").and_then(Value::as_str) {
        Some("yes") => 1,
        Some("no") => 0,
        other => {
            return Ok(Err(format!(
                "post {id}: skipping unresolved question (resolution {other:?})"
            )))
        }
    };
    let title = post
        .get("title")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| text("title"));
    let as_of = q
        .get("open_time")
        .and_then(Value::as_str)
        .and_then(parse_date)
        .ok_or_else(|| CorpusError::Payload(format!("post {id}: missing or invalid open_time")))?;
    Ok(Ok(Question {
        id,
        title,
        description: text("description"),
        resolution_criteria: text("resolution_criteria"),
        fine_print: text("fine_print"),
        as_of_date: as_of,
        resolved_outcome: Some(outcome),
    }))
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.date_naive())
        .ok()
        .or_else(|| NaiveDate::parse_from_str(s.get(..10)?, "%Y-%m-%d").ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn post_parsing() {
        let post = json!({"id": 7, "title": "Will X?", "question": {
            "type": "binary", "description": "d", "resolution_criteria": "r",
            "fine_print": "", "resolution": "no", "open_time": "2025-04-02T10:00:00Z"}});
        let q = parse_post(&post).unwrap().unwrap();
        assert_eq!(q.id, "7");
        assert_eq!(q.resolved_outcome, Some(0));
        assert_eq!(q.as_of_date, NaiveDate::from_ymd_opt(2025, 4, 2).unwrap());

        let open = json!({"id": 8, "question": {"type": "binary", "resolution": null, "open_time": "2025-04-02"}});
        assert!(parse_post(&open).unwrap().is_err());
        let numeric = json!({"id": 9, "question": {"type": "numeric", "resolution": "12"}});
        assert!(parse_post(&numeric).unwrap().is_err());
    }

    #[test]
    fn credential_is_redacted() {
        assert_eq!(format!("{:?}", Credential::new("hunter2")), "Credential(***)");
    }
}
