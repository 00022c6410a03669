//! End-to-end runs on the simulator: plan coverage, what each agent sees,
//! failure handling, and resumption.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::net::TcpListener;

use delib_core::agents::{AgentRuntime, AgentSpec, Backend, HttpEndpoint, ModelId, Role, SimParams, Stage};
use delib_core::corpus::{load_corpus, InfoLevel};
use delib_core::pipeline::{self, PipelineError};
use delib_core::protocol::{
    plan_groups, planned_cells, CellKey, Diversity, ProtocolError, RunOptions, RunStore, Runner, Scenario,
    RECORDS_FILE,
};
use delib_core::retry::RetryPolicy;

fn opts() -> RunOptions {
    RunOptions {
        workers: 4,
        stop_after: None,
    }
}

#[test]
fn three_questions_cover_every_cell_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::sim_config(dir.path(), 3, 5);
    let out = pipeline::run(&cfg, &opts()).unwrap();
    assert!(out.report.is_complete());
    assert!(!out.resumed);
    // per question: 1 + 1 diverse groups, 3 + 3 homogeneous groups
    assert_eq!(out.report.planned_cells, 3 * 8 * 6);
    assert_eq!(out.report.written, 144);
    assert!(out.manifest.finished_at.is_some());

    let store = RunStore::open(&out.run_dir).unwrap();
    let records = store.records().unwrap();
    assert_eq!(records.len(), 144);
    let mut per_group: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *per_group.entry(r.group_key.as_str()).or_default() += 1;
        assert!((0.0..=1.0).contains(&r.probability));
        assert!((r.probability * 100.0 - r.raw_probability).abs() < 1e-9);
        match r.scenario.diversity {
            Diversity::Diverse => assert_eq!(r.model_id, ModelId::PANEL[usize::from(r.agent_index)]),
            Diversity::Homogeneous => assert!(r.group_key.ends_with(r.model_id.as_str())),
        }
        assert_eq!(r.info_level, r.scenario.info);
    }
    assert_eq!(per_group.len(), 24);
    assert!(per_group.values().all(|&n| n == 6));
    let timestamps: Vec<String> = records.iter().map(|r| r.timestamp.to_rfc3339()).collect();
    assert!(timestamps.iter().all(|t| t.ends_with("T00:00:00+00:00")));
}

#[test]
fn agents_see_only_their_information_and_peers_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::sim_config(dir.path(), 4, 9);
    let out = pipeline::run(&cfg, &opts()).unwrap();
    let corpus = load_corpus(cfg.corpus_path().unwrap()).unwrap();
    let store = RunStore::open(&out.run_dir).unwrap();
    let records = store.records().unwrap();
    let scenarios: Vec<Scenario> = Scenario::PRIMARY.to_vec();
    let plan = plan_groups(&corpus, &scenarios).unwrap();
    for g in &plan {
        let units = corpus.units(&g.question_id).unwrap();
        let mut stage1_prompts = Vec::new();
        let mut stage1_replies = Vec::new();
        for i in 0..3u8 {
            let cell = CellKey {
                group_key: g.group_key.clone(),
                agent_index: i,
                stage: Stage::Independent,
            };
            let a = store.read_archive(&cell).unwrap();
            assert!(a.context.is_empty());
            for (k, unit) in units.iter().enumerate() {
                let expected = match g.scenario.info {
                    InfoLevel::Shared => true,
                    InfoLevel::Distributed => k == usize::from(i),
                    InfoLevel::None => false,
                };
                assert_eq!(a.prompt.contains(unit.as_str()), expected, "{cell} unit {k}");
            }
            stage1_prompts.push(a.prompt);
            stage1_replies.push(a.reply);
        }
        let rationale = |i: usize| {
            records
                .iter()
                .find(|r| r.group_key == g.group_key && usize::from(r.agent_index) == i && r.stage == Stage::Independent)
                .unwrap()
                .rationale
                .clone()
        };
        for i in 0..3usize {
            let cell = CellKey {
                group_key: g.group_key.clone(),
                agent_index: i as u8,
                stage: Stage::Deliberative,
            };
            let a = store.read_archive(&cell).unwrap();
            assert_eq!(a.context.len(), 2);
            assert_eq!(a.context[0].role, Role::User);
            assert_eq!(a.context[0].content, stage1_prompts[i]);
            assert_eq!(a.context[1].role, Role::Assistant);
            assert_eq!(a.context[1].content, stage1_replies[i]);
            let first = a.prompt.find(&rationale((i + 1) % 3)).unwrap();
            let second = a.prompt.find(&rationale((i + 2) % 3)).unwrap();
            assert!(first < second, "{cell}");
            assert!(!a.prompt.contains(&rationale(i)));
            // deliberation adds no research text
            for unit in units {
                assert!(!a.prompt.contains(unit.as_str()));
            }
        }
    }
}

#[test]
fn rerun_of_complete_run_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::sim_config(dir.path(), 3, 2);
    let first = pipeline::run(&cfg, &opts()).unwrap();
    let path = first.run_dir.join(RECORDS_FILE);
    let before = fs::read(&path).unwrap();
    let mut again = cfg.clone();
    again.workers = 1;
    let second = pipeline::run(&again, &opts()).unwrap();
    assert!(second.resumed);
    assert_eq!(second.report.written, 0);
    assert_eq!(second.report.already_present, 144);
    assert_eq!(fs::read(&path).unwrap(), before);

    let mut changed = cfg.clone();
    changed.seed += 1;
    assert!(matches!(pipeline::run(&changed, &opts()), Err(PipelineError::ConfigMismatch(_))));
}

#[test]
fn resume_refuses_a_changed_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::sim_config(dir.path(), 3, 2);
    let out = pipeline::run(
        &cfg,
        &RunOptions {
            workers: 2,
            stop_after: Some(10),
        },
    )
    .unwrap();
    assert!(out.report.interrupted);
    let corpus_path = cfg.corpus_path().unwrap().to_path_buf();
    let text = fs::read_to_string(&corpus_path).unwrap();
    fs::write(&corpus_path, text.replacen("Synthetic", "Edited", 1)).unwrap();
    let err = pipeline::resume(&out.run_dir, &opts()).unwrap_err();
    assert!(matches!(err, PipelineError::Protocol(ProtocolError::DigestMismatch { .. })));
    assert!(matches!(
        pipeline::run(&cfg, &opts()),
        Err(PipelineError::Protocol(ProtocolError::DigestMismatch { .. }))
    ));
}

#[test]
fn torn_final_line_is_dropped_and_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::sim_config(dir.path(), 3, 4);
    let full = pipeline::run(&cfg, &opts()).unwrap();
    let path = full.run_dir.join(RECORDS_FILE);
    let reference = fs::read(&path).unwrap();

    // keep 40 whole lines plus half of the 41st
    let cut: usize = reference
        .split_inclusive(|&b| b == b'\n')
        .take(40)
        .map(<[u8]>::len)
        .sum();
    fs::write(&path, &reference[..cut + 25]).unwrap();
    let store = RunStore::open(&full.run_dir).unwrap();
    assert_eq!(store.len(), 40);
    drop(store);
    let out = pipeline::resume(&full.run_dir, &opts()).unwrap();
    assert!(out.report.is_complete());
    assert_eq!(out.report.written, 104);
    assert_eq!(fs::read(&path).unwrap(), reference);
}

fn closed_port_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1/chat")
}

#[test]
fn a_failing_agent_leaves_gaps_that_a_later_pass_fills() {
    std::env::set_var("DELIB_TEST_DEAD_KEY", "k");
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::sim_config(dir.path(), 1, 3);
    let corpus = load_corpus(cfg.corpus_path().unwrap()).unwrap();
    let scenarios = [Scenario::PRIMARY[0]];
    let plan = plan_groups(&corpus, &scenarios).unwrap();
    assert_eq!(plan.len(), 1);

    let manifest = delib_core::protocol::RunManifest {
        run_id: "t".into(),
        corpus_digest: "d".into(),
        scenarios: vec![scenarios[0].key()],
        config: cfg.clone(),
        seed: cfg.seed,
        started_at: chrono::Utc::now(),
        finished_at: None,
        software_version: "test".into(),
    };
    let store = RunStore::create(dir.path().join("run"), &manifest).unwrap();
    let mut agents: BTreeMap<ModelId, AgentSpec> = cfg.agent_specs().unwrap();
    let healthy = agents[&ModelId::Pro].clone();
    agents.get_mut(&ModelId::Pro).unwrap().backend = Backend::Http(HttpEndpoint {
        url: closed_port_url(),
        model: "m".into(),
        credential_env: "DELIB_TEST_DEAD_KEY".into(),
        api_style: Default::default(),
        rate_limit_per_minute: None,
        timeout_secs: 2,
    });
    let retry = RetryPolicy {
        max_attempts: 2,
        base_delay_ms: 1,
        max_delay_ms: 1,
        jitter: false,
    };
    let runtime = AgentRuntime::new(retry, cfg.seed);
    let report = Runner::new(&corpus, &agents, &runtime, &store).execute(&plan, &opts()).unwrap();
    assert_eq!(report.written, 2);
    assert_eq!(report.failed.len(), 1);
    assert!(report.failed[0].ends_with("#2#independent"));
    assert_eq!(report.missing.len(), 4);
    assert!(!report.is_complete());
    let failures = fs::read_to_string(store.dir().join("failures.jsonl")).unwrap();
    assert!(failures.contains("\"attempts\":2"));

    agents.insert(ModelId::Pro, healthy);
    let report = Runner::new(&corpus, &agents, &runtime, &store).execute(&plan, &opts()).unwrap();
    assert!(report.is_complete());
    assert_eq!(report.already_present, 2);
    assert_eq!(report.written, 4);
    let cells: Vec<CellKey> = store.records().unwrap().iter().map(|r| r.cell()).collect();
    let mut expected = planned_cells(&plan);
    expected.sort();
    let mut got = cells.clone();
    got.sort();
    assert_eq!(got, expected);
}

#[test]
fn peer_weight_pulls_deliberative_forecasts_toward_peers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::sim_config(dir.path(), 6, 8);
    cfg.scenarios = vec![Scenario::PRIMARY[0].key()];
    for m in ["GPT5", "Sonnet", "Pro"] {
        common::set_sim(
            &mut cfg,
            m,
            SimParams {
                peer_weight: 1.0,
                ..Default::default()
            },
        );
    }
    let out = pipeline::run(&cfg, &opts()).unwrap();
    let records = RunStore::open(&out.run_dir).unwrap().records().unwrap();
    for g in records.chunks(6) {
        let s1: Vec<f64> = g[..3].iter().map(|r| r.raw_probability).collect();
        for (i, r) in g[3..].iter().enumerate() {
            assert_eq!(r.stage, Stage::Deliberative);
            let peer_mean = 0.5 * (s1[(i + 1) % 3] + s1[(i + 2) % 3]);
            assert!((r.raw_probability - peer_mean).abs() < 1e-9);
        }
    }
}
