//! Stage-specific prompt rendering.
//!
//! Templates use `{{slot}}` markers. Substituted values are inserted
//! verbatim and never rescanned, so text containing `{{` or `%` passes
//! through untouched.

use std::collections::HashMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentResponse};
use crate::corpus::Question;

pub const INDEPENDENT_TEMPLATE: &str = include_str!("templates/independent_v1.txt");
pub const DELIBERATION_TEMPLATE: &str = include_str!("templates/deliberation_v1.txt");
pub const INDEPENDENT_TEMPLATE_ID: &str = "independent_v1";
pub const DELIBERATION_TEMPLATE_ID: &str = "deliberation_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOnePrompt {
    pub rendered: String,
}

impl StageOnePrompt {
    pub fn template_id(&self) -> &'static str {
        INDEPENDENT_TEMPLATE_ID
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerView {
    pub rationale: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoPrompt {
    pub rendered: String,
    pub peers: [PeerView; 2],
}

impl StageTwoPrompt {
    pub fn template_id(&self) -> &'static str {
        DELIBERATION_TEMPLATE_ID
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prompt {
    StageOne(StageOnePrompt),
    StageTwo(StageTwoPrompt),
}

impl Prompt {
    pub fn rendered(&self) -> &str {
        match self {
            Prompt::StageOne(p) => &p.rendered,
            Prompt::StageTwo(p) => &p.rendered,
        }
    }

    pub fn template_id(&self) -> &'static str {
        match self {
            Prompt::StageOne(p) => p.template_id(),
            Prompt::StageTwo(p) => p.template_id(),
        }
    }
}

/// Substitutes every `{{name}}` in `template`. Fails on a slot without a
/// value or an unterminated marker.
pub fn render_template(template: &str, values: &HashMap<&str, &str>) -> Result<String, AgentError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| AgentError::Template("unterminated slot marker".into()))?;
        let name = &after[..end];
        let value = values
            .get(name)
            .ok_or_else(|| AgentError::Template(format!("unfilled slot {{{{{name}}}}}")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn render_stage1(
    question: &Question,
    information: &str,
    as_of: NaiveDate,
) -> Result<StageOnePrompt, AgentError> {
    let date = as_of.format("%Y-%m-%d").to_string();
    let values = HashMap::from([
        ("questionTitle", question.title.as_str()),
        ("questionDescription", question.description.as_str()),
        ("questionResolutionCriteria", question.resolution_criteria.as_str()),
        ("question.questionFinePrint", question.fine_print.as_str()),
        ("information", information),
        ("question.date", date.as_str()),
    ]);
    Ok(StageOnePrompt {
        rendered: render_template(INDEPENDENT_TEMPLATE, &values)?,
    })
}

/// Probability as emitted on the 0-100 scale; integral values print without
/// a fractional part.
pub fn format_percent(p: f64) -> String {
    format!("{p}")
}

/// Renders the deliberation message. `peer_a` fills the "Forecaster 2"
/// block and `peer_b` the "Forecaster 3" block. The agent's own stage-one
/// exchange is carried separately as prior conversation turns.
pub fn render_stage2(
    peer_a: &AgentResponse,
    peer_b: &AgentResponse,
) -> Result<StageTwoPrompt, AgentError> {
    for (i, p) in [peer_a, peer_b].iter().enumerate() {
        if p.rationale.trim().is_empty() {
            return Err(AgentError::MissingPeer(format!("peer {} has no rationale", i + 2)));
        }
    }
    let pa = format_percent(peer_a.probability);
    let pb = format_percent(peer_b.probability);
    let values = HashMap::from([
        ("forecaster2_rationale", peer_a.rationale.as_str()),
        ("forecaster2_probability", pa.as_str()),
        ("forecaster3_rationale", peer_b.rationale.as_str()),
        ("forecaster3_probability", pb.as_str()),
    ]);
    Ok(StageTwoPrompt {
        rendered: render_template(DELIBERATION_TEMPLATE, &values)?,
        peers: [
            PeerView {
                rationale: peer_a.rationale.clone(),
                probability: peer_a.probability,
            },
            PeerView {
                rationale: peer_b.rationale.clone(),
                probability: peer_b.probability,
            },
        ],
    })
}

/// Conversation for a stage-two call: the stage-one prompt and the agent's
/// own stage-one reply, followed by the deliberation message.
pub fn stage2_conversation(
    stage1_prompt: &StageOnePrompt,
    own_stage1_raw: &str,
    stage2: &StageTwoPrompt,
) -> Vec<ChatMessage> {
    vec![
        ChatMessage::user(stage1_prompt.rendered.clone()),
        ChatMessage::assistant(own_stage1_raw),
        ChatMessage::user(stage2.rendered.clone()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn question(fine_print: &str) -> Question {
        Question {
            id: "q1".into(),
            title: "Will it rain?".into(),
            description: "Weather.".into(),
            resolution_criteria: "Rain gauge > 0.".into(),
            fine_print: fine_print.into(),
            as_of_date: NaiveDate::from_ymd_opt(2025, 6, 1).unwrap(),
            resolved_outcome: Some(1),
        }
    }

    fn response(p: f64, rationale: &str) -> AgentResponse {
        AgentResponse {
            probability: p,
            rationale: rationale.into(),
            structured_fields: BTreeMap::new(),
            raw: String::new(),
        }
    }

    #[test]
    fn templates_have_expected_slots() {
        assert!(INDEPENDENT_TEMPLATE.starts_with("You are a professional forecaster interviewing for a job.\n"));
        assert!(DELIBERATION_TEMPLATE
            .starts_with("You are now in a deliberation phase with two other expert \nforecasters."));
        assert_eq!(INDEPENDENT_TEMPLATE.matches("{{").count(), 6);
        assert_eq!(DELIBERATION_TEMPLATE.matches("{{").count(), 4);
    }

    #[test]
    fn empty_fine_print_leaves_blank_line() {
        let q = question("");
        let p = render_stage1(&q, "report", q.as_of_date).unwrap();
        assert!(!p.rendered.contains("{{"));
        assert!(p.rendered.contains("Rain gauge > 0.\n\n\n\nYour research assistant's report says: report"));
        assert!(p.rendered.contains("Today is 2025-06-01."));
    }

    #[test]
    fn stage2_slots() {
        let a = response(30.0, "A thinks 100% sure-ish {{not a slot}}");
        let b = response(70.0, "B");
        let p = render_stage2(&a, &b).unwrap();
        assert!(p.rendered.contains("Forecaster 2's Analysis\nA thinks 100% sure-ish {{not a slot}} Forecast: 30%"));
        assert!(p.rendered.contains("Forecaster 3's Analysis\nB Forecast: 70%"));
        assert_eq!(p.template_id(), "deliberation_v1");
    }

    #[test]
    fn identical_peers_give_identical_blocks() {
        let a = response(55.5, "same");
        let p = render_stage2(&a, &a).unwrap();
        assert_eq!(p.rendered.matches("same Forecast: 55.5%").count(), 2);
    }

    #[test]
    fn missing_rationale_is_rejected() {
        let a = response(30.0, "  ");
        assert!(matches!(render_stage2(&a, &a), Err(AgentError::MissingPeer(_))));
    }

    #[test]
    fn unfilled_slot_is_an_error() {
        let values = HashMap::from([("a", "x")]);
        assert!(render_template("{{a}} {{b}}", &values).is_err());
        assert_eq!(render_template("{{a}}!", &values).unwrap(), "x!");
    }
}
