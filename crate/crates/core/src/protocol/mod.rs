//! The scenario matrix and the two-stage protocol.
//!
//! A run is a list of [`GroupAssignment`]s. Each group produces six cells:
//! three independent forecasts, then three deliberative ones. Cells are
//! persisted in an append-only [`RunStore`]; completion is whatever the
//! store holds.

mod runner;
mod store;

pub use runner::{CompletionReport, RunOptions, Runner};
pub use store::{
    archive_file_name, read_manifest, read_records, ArchiveEntry, FailureEntry, RunManifest, RunStore, StoreError,
    ARCHIVE_DIR, FAILURES_FILE, MANIFEST_FILE, RECORDS_FILE,
};

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, ModelId, Stage};
use crate::corpus::{Corpus, CorpusError, InfoLevel};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("scenario {0} listed twice")]
    DuplicateScenario(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no agent configured for model {0}")]
    MissingAgent(ModelId),
    #[error("group {group}: missing stage-one record for agent {agent}")]
    MissingStageOne { group: String, agent: usize },
    #[error("corpus digest {found} does not match the run manifest ({expected})")]
    DigestMismatch { expected: String, found: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diversity {
    Diverse,
    Homogeneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Scenario {
    pub diversity: Diversity,
    pub info: InfoLevel,
}

impl Scenario {
    pub const fn new(diversity: Diversity, info: InfoLevel) -> Self {
        Self { diversity, info }
    }

    /// The four primary scenarios, in the row order of the scenario table.
    pub const PRIMARY: [Scenario; 4] = [
        Scenario::new(Diversity::Diverse, InfoLevel::Distributed),
        Scenario::new(Diversity::Diverse, InfoLevel::Shared),
        Scenario::new(Diversity::Homogeneous, InfoLevel::Distributed),
        Scenario::new(Diversity::Homogeneous, InfoLevel::Shared),
    ];

    /// No-information arms used as the regression baseline.
    pub const BASELINE: [Scenario; 2] = [
        Scenario::new(Diversity::Diverse, InfoLevel::None),
        Scenario::new(Diversity::Homogeneous, InfoLevel::None),
    ];

    pub fn key(&self) -> String {
        let d = match self.diversity {
            Diversity::Diverse => "diverse",
            Diversity::Homogeneous => "homogeneous",
        };
        format!("{d}_{}", self.info.as_str())
    }

    /// Row label, e.g. "Diverse models, shared information".
    pub fn label(&self) -> String {
        let d = match self.diversity {
            Diversity::Diverse => "Diverse models",
            Diversity::Homogeneous => "Homogeneous models",
        };
        let i = match self.info {
            InfoLevel::None => "no information",
            InfoLevel::Distributed => "distributed information",
            InfoLevel::Shared => "shared information",
        };
        format!("{d}, {i}")
    }

    pub fn is_primary(&self) -> bool {
        self.info != InfoLevel::None
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for Scenario {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (d, i) = s
            .split_once('_')
            .ok_or_else(|| ProtocolError::UnknownScenario(s.to_string()))?;
        let diversity = match d {
            "diverse" => Diversity::Diverse,
            "homogeneous" => Diversity::Homogeneous,
            _ => return Err(ProtocolError::UnknownScenario(s.to_string())),
        };
        let info = match i {
            "none" => InfoLevel::None,
            "distributed" => InfoLevel::Distributed,
            "shared" => InfoLevel::Shared,
            _ => return Err(ProtocolError::UnknownScenario(s.to_string())),
        };
        Ok(Scenario { diversity, info })
    }
}

impl TryFrom<String> for Scenario {
    type Error = ProtocolError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.key()
    }
}

/// Model assigned to a question by cycling through the panel on its
/// 1-based position: 1, 4, 7, ... GPT5; 2, 5, 8, ... Sonnet; 3, 6, 9, ... Pro.
pub fn round_robin_model(position: usize) -> ModelId {
    match position % 3 {
        1 => ModelId::Gpt5,
        2 => ModelId::Sonnet,
        _ => ModelId::Pro,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub scenario: Scenario,
    pub question_id: String,
    pub group_key: String,
    pub members: [ModelId; 3],
    /// 1-based question position in corpus order.
    pub position: usize,
}

impl GroupAssignment {
    /// For homogeneous groups, whether this group's model is the one the
    /// round-robin rule gives its question. Diverse groups return false.
    pub fn is_round_robin(&self) -> bool {
        self.scenario.diversity == Diversity::Homogeneous
            && self.members[0] == round_robin_model(self.position)
    }
}

/// Expands scenarios into groups: one diverse group per question, or three
/// homogeneous groups per question (one per panel model).
pub fn plan_groups(corpus: &Corpus, scenarios: &[Scenario]) -> Result<Vec<GroupAssignment>, ProtocolError> {
    if corpus.is_empty() {
        return Err(ProtocolError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    let mut plan = Vec::new();
    for scenario in scenarios {
        if !seen.insert(*scenario) {
            return Err(ProtocolError::DuplicateScenario(scenario.key()));
        }
        for (i, q) in corpus.questions().iter().enumerate() {
            let position = i + 1;
            match scenario.diversity {
                Diversity::Diverse => plan.push(GroupAssignment {
                    scenario: *scenario,
                    question_id: q.id.clone(),
                    group_key: format!("{}/{}/diverse", scenario.key(), q.id),
                    members: ModelId::PANEL,
                    position,
                }),
                Diversity::Homogeneous => {
                    for model in ModelId::PANEL {
                        plan.push(GroupAssignment {
                            scenario: *scenario,
                            question_id: q.id.clone(),
                            group_key: format!("{}/{}/{}", scenario.key(), q.id, model.as_str()),
                            members: [model; 3],
                            position,
                        });
                    }
                }
            }
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub group_key: String,
    pub agent_index: u8,
    pub stage: Stage,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}#{}", self.group_key, self.agent_index, self.stage)
    }
}

/// One agent's forecast at one stage of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub group_key: String,
    pub scenario: Scenario,
    pub question_id: String,
    pub position: usize,
    pub agent_index: u8,
    pub stage: Stage,
    pub model_id: ModelId,
    pub info_level: InfoLevel,
    /// Parsed probability divided by 100.
    pub probability: f64,
    /// Probability as the agent emitted it (0-100).
    pub raw_probability: f64,
    pub rationale: String,
    pub outcome: u8,
    /// Short digest of the information text the agent received.
    pub info_digest: String,
    pub prompt_digest: String,
    pub timestamp: DateTime<Utc>,
    pub attempts: u32,
}

impl ForecastRecord {
    pub fn cell(&self) -> CellKey {
        CellKey {
            group_key: self.group_key.clone(),
            agent_index: self.agent_index,
            stage: self.stage,
        }
    }

    pub fn is_round_robin(&self) -> bool {
        self.scenario.diversity == Diversity::Homogeneous && self.model_id == round_robin_model(self.position)
    }
}

/// Every cell a plan requires, in canonical commit order.
pub fn planned_cells(plan: &[GroupAssignment]) -> Vec<CellKey> {
    let mut cells = Vec::with_capacity(plan.len() * 6);
    for g in plan {
        for stage in [Stage::Independent, Stage::Deliberative] {
            for agent_index in 0..3u8 {
                cells.push(CellKey {
                    group_key: g.group_key.clone(),
                    agent_index,
                    stage,
                });
            }
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synthetic_corpus;

    fn all_four() -> Vec<Scenario> {
        Scenario::PRIMARY.to_vec()
    }

    #[test]
    fn full_scale_group_counts() {
        let corpus = synthetic_corpus(202, 1);
        let plan = plan_groups(&corpus, &all_four()).unwrap();
        assert_eq!(plan.len(), 1616);
        for s in Scenario::PRIMARY {
            let n = plan.iter().filter(|g| g.scenario == s).count();
            let expected = if s.diversity == Diversity::Diverse { 202 } else { 606 };
            assert_eq!(n, expected, "{s}");
        }
    }

    #[test]
    fn round_robin_split_is_67_67_68() {
        let corpus = synthetic_corpus(202, 1);
        let s = Scenario::new(Diversity::Homogeneous, InfoLevel::Shared);
        let plan = plan_groups(&corpus, &[s]).unwrap();
        let rr: Vec<_> = plan.iter().filter(|g| g.is_round_robin()).collect();
        assert_eq!(rr.len(), 202);
        let count = |m| rr.iter().filter(|g| g.members[0] == m).count();
        assert_eq!(count(ModelId::Gpt5), 68);
        assert_eq!(count(ModelId::Sonnet), 67);
        assert_eq!(count(ModelId::Pro), 67);
    }

    #[test]
    fn single_question_diverse_group() {
        let corpus = synthetic_corpus(1, 1);
        let plan = plan_groups(&corpus, &[Scenario::PRIMARY[0]]).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].members, [ModelId::Gpt5, ModelId::Sonnet, ModelId::Pro]);
        assert_eq!(plan[0].position, 1);
    }

    #[test]
    fn round_robin_positions() {
        assert_eq!(round_robin_model(1), ModelId::Gpt5);
        assert_eq!(round_robin_model(4), ModelId::Gpt5);
        assert_eq!(round_robin_model(2), ModelId::Sonnet);
        assert_eq!(round_robin_model(3), ModelId::Pro);
        assert_eq!(round_robin_model(6), ModelId::Pro);
    }

    #[test]
    fn scenario_keys_round_trip() {
        for s in Scenario::PRIMARY.iter().chain(&Scenario::BASELINE) {
            assert_eq!(s.key().parse::<Scenario>().unwrap(), *s);
        }
        assert!(matches!("diverse_partial".parse::<Scenario>(), Err(ProtocolError::UnknownScenario(_))));
        let corpus = synthetic_corpus(2, 1);
        assert!(matches!(
            plan_groups(&corpus, &[Scenario::PRIMARY[0], Scenario::PRIMARY[0]]),
            Err(ProtocolError::DuplicateScenario(_))
        ));
        assert!(matches!(plan_groups(&Corpus::default(), &all_four()), Err(ProtocolError::EmptyCorpus)));
    }
}
