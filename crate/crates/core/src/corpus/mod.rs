//! Question corpus: binary questions plus three information units each.
//!
//! On disk a corpus is UTF-8 JSON lines. Each line is either a question
//! record (`"kind":"question"`) or an information record (`"kind":"info"`).

mod fetch;
mod synthetic;

pub use fetch::{fetch_questions, ApiSource, Credential, FetchReport};
pub use synthetic::synthetic_corpus;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Text supplied in place of a research report when no information is given.
pub const NO_INFO_TEXT: &str = "No research report available.";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate question id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: duplicate information index {index} for question {question_id:?}")]
    DuplicateInfoIndex {
        line: usize,
        question_id: String,
        index: u8,
    },
    #[error("question {question_id:?} is missing information index {index}")]
    MissingInfoIndex { question_id: String, index: u8 },
    #[error("line {line}: information record for unknown question {question_id:?}")]
    UnknownQuestion { line: usize, question_id: String },
    #[error("question {0:?} is not resolved")]
    Unresolved(String),
    #[error("no question with id {0:?}")]
    NoSuchQuestion(String),
    #[error("question {0:?} has no information units")]
    NoInformation(String),
    #[error("agent index {0} out of range")]
    AgentIndex(usize),
    #[error("http error: {0}")]
    Http(String),
    #[error("unparseable payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub title: String,
    pub description: String,
    pub resolution_criteria: String,
    #[serde(default)]
    pub fine_print: String,
    pub as_of_date: NaiveDate,
    /// 1 = Yes, 0 = No, `None` while unresolved.
    pub resolved_outcome: Option<u8>,
}

impl Question {
    pub fn outcome(&self) -> Result<u8, CorpusError> {
        self.resolved_outcome
            .ok_or_else(|| CorpusError::Unresolved(self.id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationUnit {
    pub question_id: String,
    pub index: u8,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Question(Question),
    Info(InformationUnit),
}

/// How much of the information package an agent sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoLevel {
    None,
    Distributed,
    Shared,
}

impl InfoLevel {
    /// Number of information units each agent receives.
    pub fn units_seen(self) -> usize {
        match self {
            InfoLevel::None => 0,
            InfoLevel::Distributed => 1,
            InfoLevel::Shared => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InfoLevel::None => "none",
            InfoLevel::Distributed => "distributed",
            InfoLevel::Shared => "shared",
        }
    }
}

impl fmt::Display for InfoLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub require_resolution: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            require_resolution: true,
        }
    }
}

/// Validated, immutable question corpus. Question order is file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    questions: Vec<Question>,
    info: HashMap<String, [String; 3]>,
}

impl Corpus {
    pub fn new(questions: Vec<Question>, units: Vec<InformationUnit>) -> Result<Self, CorpusError> {
        let mut lines = Vec::with_capacity(questions.len() + units.len());
        lines.extend(questions.into_iter().map(Record::Question));
        lines.extend(units.into_iter().map(Record::Info));
        Self::from_records(lines.into_iter().enumerate().map(|(i, r)| (i + 1, r)), LoadOptions {
            require_resolution: false,
        })
    }

    pub fn parse(text: &str, opts: LoadOptions) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            records.push((line_no, rec));
        }
        Self::from_records(records.into_iter(), opts)
    }

    pub fn load(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Self, CorpusError> {
        Self::parse(&fs::read_to_string(path)?, opts)
    }

    fn from_records(
        records: impl Iterator<Item = (usize, Record)>,
        opts: LoadOptions,
    ) -> Result<Self, CorpusError> {
        let mut questions = Vec::new();
        let mut ids = HashSet::new();
        let mut units: BTreeMap<String, [Option<String>; 3]> = BTreeMap::new();
        let mut unit_lines: Vec<(usize, String)> = Vec::new();
        for (line, rec) in records {
            match rec {
                Record::Question(q) => {
                    if q.id.is_empty() {
                        return Err(CorpusError::Malformed {
                            line,
                            message: "empty question id".into(),
                        });
                    }
                    if let Some(o) = q.resolved_outcome {
                        if o > 1 {
                            return Err(CorpusError::Malformed {
                                line,
                                message: format!("resolved_outcome must be 0 or 1, got {o}"),
                            });
                        }
                    } else if opts.require_resolution {
                        return Err(CorpusError::Unresolved(q.id));
                    }
                    if !ids.insert(q.id.clone()) {
                        return Err(CorpusError::DuplicateId { line, id: q.id });
                    }
                    questions.push(q);
                }
                Record::Info(u) => {
                    if !(1..=3).contains(&u.index) {
                        return Err(CorpusError::Malformed {
                            line,
                            message: format!("information index must be 1..3, got {}", u.index),
                        });
                    }
                    if u.text.trim().is_empty() {
                        return Err(CorpusError::Malformed {
                            line,
                            message: "empty information text".into(),
                        });
                    }
                    let slot = &mut units.entry(u.question_id.clone()).or_default()[usize::from(u.index - 1)];
                    if slot.is_some() {
                        return Err(CorpusError::DuplicateInfoIndex {
                            line,
                            question_id: u.question_id,
                            index: u.index,
                        });
                    }
                    *slot = Some(u.text);
                    unit_lines.push((line, u.question_id));
                }
            }
        }
        for (line, qid) in unit_lines {
            if !ids.contains(&qid) {
                return Err(CorpusError::UnknownQuestion { line, question_id: qid });
            }
        }
        let mut info = HashMap::new();
        for (qid, slots) in units {
            let [a, b, c] = slots;
            match (a, b, c) {
                (Some(a), Some(b), Some(c)) => {
                    info.insert(qid, [a, b, c]);
                }
                (a, b, _) => {
                    let index = if a.is_none() { 1 } else if b.is_none() { 2 } else { 3 };
                    return Err(CorpusError::MissingInfoIndex { question_id: qid, index });
                }
            }
        }
        Ok(Self { questions, info })
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// 1-based position of a question in corpus order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == id).map(|i| i + 1)
    }

    pub fn units(&self, question_id: &str) -> Option<&[String; 3]> {
        self.info.get(question_id)
    }

    /// True when every question carries its three information units. A
    /// corpus where this is false can only be run without information.
    pub fn info_complete(&self) -> bool {
        self.questions.iter().all(|q| self.info.contains_key(&q.id))
    }

    /// Questions lacking information units, in corpus order.
    pub fn missing_info(&self) -> Vec<&str> {
        self.questions
            .iter()
            .filter(|q| !self.info.contains_key(&q.id))
            .map(|q| q.id.as_str())
            .collect()
    }

    /// The research-report text agent `agent_index` receives at `level`.
    pub fn information_for(
        &self,
        question_id: &str,
        level: InfoLevel,
        agent_index: usize,
    ) -> Result<String, CorpusError> {
        if agent_index > 2 {
            return Err(CorpusError::AgentIndex(agent_index));
        }
        if self.question(question_id).is_none() {
            return Err(CorpusError::NoSuchQuestion(question_id.to_string()));
        }
        if level == InfoLevel::None {
            return Ok(NO_INFO_TEXT.to_string());
        }
        let units = self
            .info
            .get(question_id)
            .ok_or_else(|| CorpusError::NoInformation(question_id.to_string()))?;
        Ok(match level {
            InfoLevel::Distributed => units[agent_index].clone(),
            _ => units.join("\n\n"),
        })
    }

    /// Canonical serialization: each question followed by its units in index order.
    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for q in &self.questions {
            writeln!(out, "{}", to_line(&Record::Question(q.clone())))?;
            if let Some(units) = self.info.get(&q.id) {
                for (i, text) in units.iter().enumerate() {
                    let unit = InformationUnit {
                        question_id: q.id.clone(),
                        index: i as u8 + 1,
                        text: text.clone(),
                    };
                    writeln!(out, "{}", to_line(&Record::Info(unit)))?;
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

fn to_line(rec: &Record) -> String {
    serde_json::to_string(rec).expect("corpus records always serialize")
}

/// Convenience wrapper: load and require every question to be resolved.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    Corpus::load(path, LoadOptions::default())
}

/// Hex SHA-256 of raw corpus bytes.
pub fn corpus_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn text_digest(text: &str) -> String {
    let full = corpus_digest(text.as_bytes());
    full[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: &str) -> String {
        format!(
            r#"{{"kind":"question","id":"{id}","title":"T {id}","description":"D","resolution_criteria":"R","fine_print":"","as_of_date":"2025-05-01","resolved_outcome":1}}"#
        )
    }

    fn info(id: &str, index: u8, text: &str) -> String {
        format!(r#"{{"kind":"info","question_id":"{id}","index":{index},"text":"{text}"}}"#)
    }

    #[test]
    fn minimal_valid_corpus() {
        let text = [q("a"), info("a", 1, "one"), info("a", 2, "two"), info("a", 3, "three")].join("\n");
        let c = Corpus::parse(&text, LoadOptions::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.info_complete());
    }

    #[test]
    fn duplicate_info_index() {
        let text = [q("a"), info("a", 1, "x"), info("a", 2, "y"), info("a", 2, "z")].join("\n");
        let err = Corpus::parse(&text, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateInfoIndex { line: 4, index: 2, .. }));
        assert!(err.to_string().contains("duplicate information index"));
    }

    #[test]
    fn missing_info_index() {
        let text = [q("a"), info("a", 1, "x"), info("a", 3, "z")].join("\n");
        let err = Corpus::parse(&text, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::MissingInfoIndex { index: 2, .. }));
    }

    #[test]
    fn duplicate_id_and_malformed_line() {
        let text = [q("a"), q("a")].join("\n");
        assert!(matches!(
            Corpus::parse(&text, LoadOptions::default()),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
        let text = [q("a"), "{not json".to_string()].join("\n");
        assert!(matches!(
            Corpus::parse(&text, LoadOptions::default()),
            Err(CorpusError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn unresolved_rejected_only_when_required() {
        let text = q("a").replace(r#""resolved_outcome":1"#, r#""resolved_outcome":null"#);
        assert!(matches!(
            Corpus::parse(&text, LoadOptions::default()),
            Err(CorpusError::Unresolved(_))
        ));
        let c = Corpus::parse(&text, LoadOptions { require_resolution: false }).unwrap();
        assert!(c.questions()[0].outcome().is_err());
    }

    #[test]
    fn info_for_unknown_question() {
        let text = [q("a"), info("b", 1, "x")].join("\n");
        assert!(matches!(
            Corpus::parse(&text, LoadOptions::default()),
            Err(CorpusError::UnknownQuestion { line: 2, .. })
        ));
    }

    #[test]
    fn information_levels() {
        let text = [q("a"), info("a", 1, "one"), info("a", 2, "two"), info("a", 3, "three")].join("\n");
        let c = Corpus::parse(&text, LoadOptions::default()).unwrap();
        assert_eq!(c.information_for("a", InfoLevel::Shared, 1).unwrap(), "one\n\ntwo\n\nthree");
        assert_eq!(c.information_for("a", InfoLevel::Distributed, 0).unwrap(), "one");
        assert_eq!(c.information_for("a", InfoLevel::Distributed, 2).unwrap(), "three");
        assert_eq!(c.information_for("a", InfoLevel::None, 2).unwrap(), NO_INFO_TEXT);
        assert!(c.information_for("a", InfoLevel::None, 3).is_err());
    }

    #[test]
    fn no_info_corpus_only_supports_none() {
        let c = Corpus::parse(&q("a"), LoadOptions::default()).unwrap();
        assert!(!c.info_complete());
        assert_eq!(c.missing_info(), vec!["a"]);
        assert!(matches!(
            c.information_for("a", InfoLevel::Distributed, 0),
            Err(CorpusError::NoInformation(_))
        ));
        assert_eq!(c.information_for("a", InfoLevel::None, 0).unwrap(), NO_INFO_TEXT);
    }
}
