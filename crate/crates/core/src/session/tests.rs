use std::collections::BTreeMap;
use std::sync::Arc;

use super::*;
use crate::gateway::HashingEmbedder;
use crate::lu::{LinkerBranch, MetaData};

fn meta(doc: &str) -> MetaData {
    MetaData { source_doc_id: doc.into(), title: doc.into(), ..Default::default() }
}

fn step(doc: &str, header: &str, prereq: &str, linker: Vec<LinkerBranch>) -> LogicUnit {
    let mut lu = LogicUnit::new(LuType::Step, meta(doc), header, format!("Do: {header}"));
    lu.prerequisite = prereq.into();
    lu.linker = linker;
    lu.assign_id();
    lu
}

fn fixture() -> Vec<LogicUnit> {
    use LinkerToken::*;
    vec![
        step(
            "load",
            "Check the server load.",
            "Access to the server monitor.",
            vec![
                LinkerBranch::new("the server load is high", "Optimize the server performance", Continue),
                LinkerBranch::new("responses are slow but load is normal", "Inspect the slow request log", Continue),
            ],
        ),
        step(
            "load",
            "Optimize the server performance.",
            "",
            vec![
                LinkerBranch::new("the load returns to normal", "the incident is mitigated", Mitigate),
                LinkerBranch::new("the load stays high", "Check regional network health", Cross),
            ],
        ),
        step("load", "Inspect the slow request log.", "", vec![]),
        step("net", "Check regional network health.", "", vec![LinkerBranch::new("all good", "done", Mitigate)]),
        LogicUnit::new(LuType::Faq, meta("load"), "How do I request monitor access?", "Ask in the access portal."),
    ]
}

fn engine(mode: Mode) -> Engine<f64> {
    let e: Arc<dyn Embedder<f64>> = Arc::new(HashingEmbedder::new(256));
    let kb = KnowledgeBase::build(fixture(), Some(e.as_ref())).unwrap();
    Engine::new(Arc::new(kb), Some(e), SessionConfig { mode, ..Default::default() })
}

#[test]
fn continue_then_mitigate() {
    let eng = engine(Mode::Multi);
    let (mut s, r) = eng.start("s1", "How do I check the server load? I have access to the server monitor.").unwrap();
    assert_eq!(r.kind, ResponseKind::StepInstruction);
    assert_eq!(r.header.as_deref(), Some("Check the server load."));
    assert_eq!(r.branches.len(), 2);
    let r = eng.submit_feedback(&mut s, "the server load is high").unwrap();
    assert_eq!(r.header.as_deref(), Some("Optimize the server performance."));
    assert_eq!(s.transcript().last().unwrap().scope.as_deref(), Some("doc:load"));
    let r = eng.submit_feedback(&mut s, "the load returns to normal").unwrap();
    assert_eq!((r.kind, r.status), (ResponseKind::Mitigated, SessionStatus::Mitigated));
    assert_eq!(s.turn_count, 3);
    assert!(s.transcript().last().unwrap().query.is_none());
    assert!(matches!(eng.submit_feedback(&mut s, "again"), Err(SessionError::Terminal(_))));
}

#[test]
fn clarification_then_step() {
    let eng = engine(Mode::Multi);
    let (mut s, r) = eng.start("s", "How do I check the server load?").unwrap();
    assert_eq!(r.kind, ResponseKind::ClarifyQuestion);
    assert_eq!(r.text, "Before checking the server load, do you have access to the server monitor?");
    let r = eng.answer_clarification(&mut s, "yes I have monitor access").unwrap();
    assert_eq!(r.kind, ResponseKind::StepInstruction);
    assert_eq!(r.header.as_deref(), Some("Check the server load."));
}

#[test]
fn negative_clarification_moves_on() {
    let eng = engine(Mode::Multi);
    let (mut s, _) = eng.start("s", "How do I check the server load?").unwrap();
    let r = eng.answer_clarification(&mut s, "no").unwrap();
    assert_ne!(r.header.as_deref(), Some("Check the server load."));
}

#[test]
fn cross_widens_scope() {
    let eng = engine(Mode::Multi);
    let (mut s, _) = eng.start("s", "Optimize the server performance").unwrap();
    let r = eng.submit_feedback(&mut s, "the load stays high").unwrap();
    assert_eq!(r.header.as_deref(), Some("Check regional network health."));
    let t = s.transcript().last().unwrap();
    assert!(t.cross_document);
    assert_eq!(t.scope.as_deref(), Some("all"));
    assert_eq!(t.branch_token.as_deref(), Some("CROSS"));
}

#[test]
fn unmatched_outcome_reasks_then_escalates() {
    let eng = engine(Mode::Multi);
    let (mut s, _) = eng.start("s", "Optimize the server performance").unwrap();
    let r = eng.submit_feedback(&mut s, "purple elephant").unwrap();
    assert_eq!(r.status, SessionStatus::AwaitingFeedback);
    let r = eng.submit_feedback(&mut s, "purple elephant").unwrap();
    assert_eq!((r.kind, r.status), (ResponseKind::Escalate, SessionStatus::Escalated));
}

#[test]
fn empty_linker_terminates() {
    let eng = engine(Mode::Multi);
    let (mut s, _) = eng.start("s", "Inspect the slow request log").unwrap();
    let r = eng.submit_feedback(&mut s, "done").unwrap();
    assert_eq!(r.status, SessionStatus::Mitigated);
}

#[test]
fn faq_single_mode_is_a_plan() {
    let eng = engine(Mode::Single);
    let (s, r) = eng.start("s", "How do I request monitor access?").unwrap();
    assert_eq!((r.kind, r.status, s.turn_count), (ResponseKind::Plan, SessionStatus::Mitigated, 1));
}

#[test]
fn no_candidates_is_no_info() {
    let eng = engine(Mode::Multi);
    let (_, r) = eng.start("s", "zebra quantum marmalade").unwrap();
    assert_eq!(r.status, SessionStatus::NoInfo);
    let empty = Engine::<f64>::new(Arc::new(KnowledgeBase::empty()), None, SessionConfig::default());
    assert_eq!(empty.start("s", "anything").unwrap().1.status, SessionStatus::NoInfo);
    assert!(matches!(empty.start("s", "  "), Err(SessionError::EmptyInput(_))));
}

#[test]
fn wrong_status_is_rejected() {
    let eng = engine(Mode::Multi);
    let (mut s, _) = eng.start("s", "Optimize the server performance").unwrap();
    assert!(matches!(eng.answer_clarification(&mut s, "yes"), Err(SessionError::WrongStatus { .. })));
}

#[test]
fn turn_budget_exhausts() {
    let mut eng = engine(Mode::Multi);
    eng.config.max_turns = 3;
    eng.config.reask_limit = 10;
    let (mut s, _) = eng.start("s", "Optimize the server performance").unwrap();
    eng.submit_feedback(&mut s, "zzz").unwrap();
    let r = eng.submit_feedback(&mut s, "zzz").unwrap();
    assert_eq!(r.status, SessionStatus::Exhausted);
    assert_eq!(s.turn_count, 3);
}

#[test]
fn transcript_replays() {
    let eng = engine(Mode::Multi);
    let (mut s, _) = eng.start("s", "How do I check the server load?").unwrap();
    eng.answer_clarification(&mut s, "yes").unwrap();
    eng.submit_feedback(&mut s, "the server load is high").unwrap();
    let jsonl = transcript_to_jsonl(s.transcript());
    let turns = transcript_from_jsonl(&jsonl).unwrap();
    assert_eq!(turns.len(), 3);
    let replayed = eng.replay("s", &turns).unwrap();
    assert_eq!(replayed, s);
}

#[test]
fn placeholders_from_facts_then_defaults() {
    let mut lu = step("d", "h", "", vec![]);
    lu.body = "where Cluster == \"<CLUSTER NAME>\" and ago(<TIME>) and <REGION>".into();
    lu.default_parameters = BTreeMap::from([("<TIME>".into(), "8h".into()), ("<CLUSTER NAME>".into(), "c-default".into())]);
    let facts = vec!["the cluster name is cluster-weu-02, region westeurope".to_string()];
    assert_eq!(substitute_placeholders(&lu, &facts), "where Cluster == \"cluster-weu-02\" and ago(8h) and <REGION>");
    assert_eq!(substitute_placeholders(&lu, &[]), "where Cluster == \"c-default\" and ago(8h) and <REGION>");
}

#[test]
fn scripted_two_steps() {
    let eng = engine(Mode::Multi);
    let task = TaskScript {
        id: "t".into(),
        question: "How do I check the server load?".into(),
        steps: vec![
            ScriptStep { expected_header: "Check the server load.".into(), outcome: "the server load is high".into(), forced_intervention: false },
            ScriptStep { expected_header: "Optimize the server performance.".into(), outcome: "the load returns to normal".into(), forced_intervention: false },
        ],
        clarification: "yes".into(),
        truth_items: vec![],
    };
    let r = eng.run_scripted(&task).unwrap();
    assert_eq!(r.successes(), 2);
    assert_eq!(r.final_status, SessionStatus::Mitigated);
    // Start, clarification, two outcomes; the closing notice is not counted.
    assert_eq!(r.turns, 3);
    let mut bad = task.clone();
    bad.steps[1].expected_header = "Inspect the slow request log.".into();
    bad.steps[1].outcome = "done".into();
    let r = eng.run_scripted(&bad).unwrap();
    assert_eq!(r.steps.iter().map(|s| s.success).collect::<Vec<_>>(), vec![true, false]);
    assert_eq!(r.pre_failure_successes(), 1);
    assert!(r.steps[1].intervention);
    let empty = TaskScript { steps: vec![], ..task };
    assert_eq!(eng.run_scripted(&empty).unwrap_err().to_string(), "empty task");
}
