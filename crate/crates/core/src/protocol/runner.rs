//! Concurrent execution of a plan against a run store.
//!
//! Workers pull groups off a shared counter and compute each group's
//! missing cells. A single sequencer commits finished groups in plan order,
//! so the records file is always a prefix of the same canonical sequence no
//! matter how many workers ran or where a previous run stopped.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use chrono::{DateTime, Utc};
use serde::Serialize;
use tracing::{debug, info, warn};

use super::store::{ArchiveEntry, FailureEntry, RunStore};
use super::{planned_cells, CellKey, ForecastRecord, GroupAssignment, ProtocolError};
use crate::agents::{
    render_stage1, render_stage2, AgentResponse, AgentRuntime, AgentSpec, Backend, CallContext,
    ChatMessage, Invocation, InvokeFailure, ModelId, Prompt, Stage, StageOnePrompt,
};
use crate::corpus::{text_digest, Corpus, CorpusError, InfoLevel, Question};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub workers: usize,
    /// Stop after committing this many new records. Used to simulate an
    /// interrupted run.
    pub stop_after: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 4,
            stop_after: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CompletionReport {
    pub planned_cells: usize,
    pub already_present: usize,
    pub written: usize,
    /// Cells whose invocation failed in this pass.
    pub failed: Vec<String>,
    /// Cells still absent from the store, in plan order.
    pub missing: Vec<String>,
    pub interrupted: bool,
}

impl CompletionReport {
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }
}

/// One computed cell waiting to be committed.
struct Commit {
    record: ForecastRecord,
    archive: ArchiveEntry,
}

#[derive(Default)]
struct GroupOutcome {
    commits: Vec<Commit>,
    failures: Vec<FailureEntry>,
}

/// A stage-one result as later stages need it.
#[derive(Debug, Clone)]
pub struct StageOneCell {
    pub record: ForecastRecord,
    pub prompt: StageOnePrompt,
    /// The agent's reply text, replayed as its own prior turn in stage two.
    pub reply: String,
}

pub struct Runner<'a> {
    corpus: &'a Corpus,
    agents: &'a BTreeMap<ModelId, AgentSpec>,
    runtime: &'a AgentRuntime,
    store: &'a RunStore,
}

impl<'a> Runner<'a> {
    pub fn new(
        corpus: &'a Corpus,
        agents: &'a BTreeMap<ModelId, AgentSpec>,
        runtime: &'a AgentRuntime,
        store: &'a RunStore,
    ) -> Self {
        Self {
            corpus,
            agents,
            runtime,
            store,
        }
    }

    fn check_plan(&self, plan: &[GroupAssignment]) -> Result<(), ProtocolError> {
        for g in plan {
            for m in g.members {
                if !self.agents.contains_key(&m) {
                    return Err(ProtocolError::MissingAgent(m));
                }
            }
            let q = self
                .corpus
                .question(&g.question_id)
                .ok_or_else(|| CorpusError::NoSuchQuestion(g.question_id.clone()))?;
            q.outcome()?;
            if g.scenario.info != InfoLevel::None && self.corpus.units(&g.question_id).is_none() {
                return Err(CorpusError::NoInformation(g.question_id.clone()).into());
            }
        }
        Ok(())
    }

    /// Computes and commits every cell of `plan` not already in the store.
    pub fn execute(&self, plan: &[GroupAssignment], opts: &RunOptions) -> Result<CompletionReport, ProtocolError> {
        self.check_plan(plan)?;
        let existing: HashMap<CellKey, ForecastRecord> =
            self.store.records()?.into_iter().map(|r| (r.cell(), r)).collect();
        let cells = planned_cells(plan);
        let already_present = cells.iter().filter(|c| existing.contains_key(c)).count();
        info!(
            groups = plan.len(),
            cells = cells.len(),
            already_present,
            "executing plan"
        );

        let workers = opts.workers.max(1).min(plan.len().max(1));
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let mut written = 0usize;
        let mut failed = Vec::new();
        let mut interrupted = false;
        let mut commit_error = None;

        thread::scope(|scope| {
            let (tx, rx) = mpsc::channel::<(usize, GroupOutcome)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, stop, existing) = (&next, &stop, &existing);
                scope.spawn(move || loop {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= plan.len() {
                        break;
                    }
                    let outcome = self.run_group(&plan[i], existing);
                    if tx.send((i, outcome)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);

            let mut pending = BTreeMap::new();
            let mut expected = 0usize;
            'recv: for (i, outcome) in rx {
                pending.insert(i, outcome);
                while let Some(outcome) = pending.remove(&expected) {
                    expected += 1;
                    for f in &outcome.failures {
                        warn!(cell = %f.cell, error = %f.error, "cell failed");
                        failed.push(f.cell.clone());
                        if let Err(e) = self.store.record_failure(f) {
                            commit_error = Some(e);
                            stop.store(true, Ordering::Relaxed);
                            break 'recv;
                        }
                    }
                    for c in &outcome.commits {
                        if opts.stop_after.is_some_and(|n| written >= n) {
                            interrupted = true;
                            stop.store(true, Ordering::Relaxed);
                            break 'recv;
                        }
                        let cell = c.record.cell();
                        let res = self
                            .store
                            .write_archive(&cell, &c.archive)
                            .and_then(|()| self.store.append(&c.record));
                        if let Err(e) = res {
                            commit_error = Some(e);
                            stop.store(true, Ordering::Relaxed);
                            break 'recv;
                        }
                        written += 1;
                    }
                    if expected % 100 == 0 {
                        debug!(groups_done = expected, written, "progress");
                    }
                }
            }
        });

        if let Some(e) = commit_error {
            return Err(e.into());
        }
        let missing: Vec<String> = cells
            .iter()
            .filter(|c| !self.store.contains(c))
            .map(ToString::to_string)
            .collect();
        Ok(CompletionReport {
            planned_cells: cells.len(),
            already_present,
            written,
            failed,
            missing,
            interrupted,
        })
    }

    fn agent(&self, model: ModelId) -> &AgentSpec {
        self.agents.get(&model).expect("plan checked against agents")
    }

    fn question(&self, id: &str) -> &Question {
        self.corpus.question(id).expect("plan checked against corpus")
    }

    fn run_group(&self, g: &GroupAssignment, existing: &HashMap<CellKey, ForecastRecord>) -> GroupOutcome {
        let mut out = GroupOutcome::default();
        let stage1 = self.run_stage1(g, existing, &mut out);
        if let Some(stage1) = stage1 {
            self.run_stage2(g, &stage1, existing, &mut out);
        }
        out
    }

    /// Stage one for all three members. Returns the three results once all
    /// exist, or `None` when any member failed.
    fn run_stage1(
        &self,
        g: &GroupAssignment,
        existing: &HashMap<CellKey, ForecastRecord>,
        out: &mut GroupOutcome,
    ) -> Option<[StageOneCell; 3]> {
        let q = self.question(&g.question_id);
        let level = g.scenario.info;
        let mut results: Vec<Option<StageOneCell>> = Vec::with_capacity(3);
        for i in 0..3usize {
            let cell = cell_key(g, i, Stage::Independent);
            let information = match self.corpus.information_for(&q.id, level, i) {
                Ok(t) => t,
                Err(e) => {
                    out.failures.push(failure(&cell, e.to_string(), 0, Vec::new()));
                    results.push(None);
                    continue;
                }
            };
            let prompt = match render_stage1(q, &information, q.as_of_date) {
                Ok(p) => p,
                Err(e) => {
                    out.failures.push(failure(&cell, e.to_string(), 0, Vec::new()));
                    results.push(None);
                    continue;
                }
            };
            if let Some(record) = existing.get(&cell) {
                let reply = self
                    .store
                    .read_archive(&cell)
                    .map(|a| a.reply)
                    .unwrap_or_else(|| fallback_reply(record));
                results.push(Some(StageOneCell {
                    record: record.clone(),
                    prompt,
                    reply,
                }));
                continue;
            }
            let agent = self.agent(g.members[i]);
            let ctx = CallContext {
                question: q,
                agent_index: i,
                stage: Stage::Independent,
                units_seen: level.units_seen(),
                peer_probs: None,
            };
            let wrapped = Prompt::StageOne(prompt.clone());
            match self.runtime.invoke(agent, &wrapped, &[], &ctx) {
                Ok(inv) => {
                    let record = self.make_record(g, q, i, Stage::Independent, &inv, &information, &prompt.rendered);
                    out.commits.push(Commit {
                        archive: archive_entry(&cell, &wrapped, Vec::new(), &inv),
                        record: record.clone(),
                    });
                    results.push(Some(StageOneCell {
                        record,
                        prompt,
                        reply: inv.reply,
                    }));
                }
                Err(f) => {
                    out.failures.push(invoke_failure(&cell, f));
                    results.push(None);
                }
            }
        }
        let mut it = results.into_iter();
        match (it.next()?, it.next()?, it.next()?) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        }
    }

    /// Stage two for all three members. Agent `i` sees agents `(i+1)%3`
    /// and `(i+2)%3`, in that order.
    fn run_stage2(
        &self,
        g: &GroupAssignment,
        stage1: &[StageOneCell; 3],
        existing: &HashMap<CellKey, ForecastRecord>,
        out: &mut GroupOutcome,
    ) {
        let q = self.question(&g.question_id);
        for i in 0..3usize {
            let cell = cell_key(g, i, Stage::Deliberative);
            if existing.contains_key(&cell) {
                continue;
            }
            let peer_a = &stage1[(i + 1) % 3].record;
            let peer_b = &stage1[(i + 2) % 3].record;
            let prompt = match render_stage2(&as_response(peer_a), &as_response(peer_b)) {
                Ok(p) => p,
                Err(e) => {
                    out.failures.push(failure(&cell, e.to_string(), 0, Vec::new()));
                    continue;
                }
            };
            let own = &stage1[i];
            let context = vec![
                ChatMessage::user(own.prompt.rendered.clone()),
                ChatMessage::assistant(own.reply.clone()),
            ];
            let ctx = CallContext {
                question: q,
                agent_index: i,
                stage: Stage::Deliberative,
                units_seen: g.scenario.info.units_seen(),
                peer_probs: Some([peer_a.raw_probability, peer_b.raw_probability]),
            };
            let rendered = prompt.rendered.clone();
            let wrapped = Prompt::StageTwo(prompt);
            let agent = self.agent(g.members[i]);
            match self.runtime.invoke(agent, &wrapped, &context, &ctx) {
                Ok(inv) => {
                    let information = self
                        .corpus
                        .information_for(&q.id, g.scenario.info, i)
                        .unwrap_or_default();
                    let record = self.make_record(g, q, i, Stage::Deliberative, &inv, &information, &rendered);
                    out.commits.push(Commit {
                        archive: archive_entry(&cell, &wrapped, context, &inv),
                        record,
                    });
                }
                Err(f) => out.failures.push(invoke_failure(&cell, f)),
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn make_record(
        &self,
        g: &GroupAssignment,
        q: &Question,
        agent_index: usize,
        stage: Stage,
        inv: &Invocation,
        information: &str,
        prompt: &str,
    ) -> ForecastRecord {
        let model = g.members[agent_index];
        ForecastRecord {
            group_key: g.group_key.clone(),
            scenario: g.scenario,
            question_id: g.question_id.clone(),
            position: g.position,
            agent_index: agent_index as u8,
            stage,
            model_id: model,
            info_level: g.scenario.info,
            probability: inv.response.probability / 100.0,
            raw_probability: inv.response.probability,
            rationale: inv.response.rationale.clone(),
            outcome: q.resolved_outcome.expect("plan checked for resolution"),
            info_digest: text_digest(information),
            prompt_digest: text_digest(prompt),
            timestamp: self.timestamp(model, q),
            attempts: inv.attempts,
        }
    }

    /// Simulated cells are stamped with the question's as-of date so their
    /// records do not depend on when they ran.
    fn timestamp(&self, model: ModelId, q: &Question) -> DateTime<Utc> {
        match self.agent(model).backend {
            Backend::Sim(_) => q.as_of_date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc(),
            Backend::Http(_) => Utc::now(),
        }
    }
}

fn cell_key(g: &GroupAssignment, agent_index: usize, stage: Stage) -> CellKey {
    CellKey {
        group_key: g.group_key.clone(),
        agent_index: agent_index as u8,
        stage,
    }
}

fn as_response(r: &ForecastRecord) -> AgentResponse {
    AgentResponse {
        probability: r.raw_probability,
        rationale: r.rationale.clone(),
        structured_fields: Default::default(),
        raw: String::new(),
    }
}

/// Stand-in for an own stage-one reply whose archive entry is missing.
fn fallback_reply(r: &ForecastRecord) -> String {
    serde_json::json!({ "rationale": r.rationale, "probability": r.raw_probability }).to_string()
}

fn archive_entry(cell: &CellKey, prompt: &Prompt, context: Vec<ChatMessage>, inv: &Invocation) -> ArchiveEntry {
    ArchiveEntry {
        cell: cell.to_string(),
        template_id: prompt.template_id().to_string(),
        context,
        prompt: prompt.rendered().to_string(),
        reply: inv.reply.clone(),
        raw: inv.response.raw.clone(),
        attempts: inv.attempts,
        failed_attempts: inv.failed_attempts.clone(),
        latency_ms: inv.latency_ms,
        completed_at: Utc::now(),
    }
}

fn failure(cell: &CellKey, error: String, attempts: u32, failed_attempts: Vec<String>) -> FailureEntry {
    FailureEntry {
        cell: cell.to_string(),
        error,
        attempts,
        failed_attempts,
        at: Utc::now(),
    }
}

fn invoke_failure(cell: &CellKey, f: InvokeFailure) -> FailureEntry {
    failure(cell, f.error.to_string(), f.attempts, f.failed_attempts)
}
