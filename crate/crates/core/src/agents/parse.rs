//! Structured-response parsing with one bounded repair pass.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use super::{AgentError, AgentResponse, Stage};

/// Fields the stage's output schema asks for, besides `probability`.
pub fn schema_fields(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Independent => &[
            "time_left_until_outcome_known",
            "status_quo_outcome",
            "no_outcome_scenario",
            "yes_outcome_scenario",
            "rationale",
        ],
        Stage::Deliberative => &["review", "rationale"],
    }
}

/// Parses a model reply into an [`AgentResponse`].
///
/// Order of attempts: the whole reply as a schema object; the first schema
/// object embedded in surrounding prose; a trailing standalone number taken
/// as the probability with the whole reply as rationale.
pub fn parse_response(text: &str, stage: Stage) -> Result<AgentResponse, AgentError> {
    if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(text.trim()) {
        if is_schema_object(&obj) {
            return from_object(&obj, text, stage);
        }
    }
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(obj))) = stream.next() {
            if is_schema_object(&obj) {
                return from_object(&obj, text, stage);
            }
        }
    }
    if let Some(p) = trailing_number(text) {
        let probability = check_probability(p)?;
        let rationale = text.trim().to_string();
        return Ok(AgentResponse {
            probability,
            rationale,
            structured_fields: BTreeMap::new(),
            raw: text.to_string(),
        });
    }
    Err(AgentError::Parse("no schema object or trailing probability found".into()))
}

fn is_schema_object(obj: &Map<String, Value>) -> bool {
    obj.contains_key("probability") && obj.contains_key("rationale")
}

fn from_object(obj: &Map<String, Value>, raw: &str, _stage: Stage) -> Result<AgentResponse, AgentError> {
    let probability = match &obj["probability"] {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_end_matches('%').trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| AgentError::Parse("probability is not a number".into()))?;
    let probability = check_probability(probability)?;
    let rationale = obj["rationale"]
        .as_str()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or(AgentError::EmptyRationale)?
        .to_string();
    let structured_fields = obj
        .iter()
        .filter(|(k, _)| k.as_str() != "probability")
        .map(|(k, v)| {
            let s = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), s)
        })
        .collect();
    Ok(AgentResponse {
        probability,
        rationale,
        structured_fields,
        raw: raw.to_string(),
    })
}

fn check_probability(p: f64) -> Result<f64, AgentError> {
    if !p.is_finite() {
        return Err(AgentError::Parse("probability is not finite".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(AgentError::ProbabilityOutOfRange(p));
    }
    Ok(p)
}

fn trailing_number(text: &str) -> Option<f64> {
    let token = text.split_whitespace().last()?;
    let token = token.trim_end_matches(['.', '%', ')', '*']);
    let token = token.trim_start_matches(['(', '*']);
    token.parse::<f64>().ok()
}
