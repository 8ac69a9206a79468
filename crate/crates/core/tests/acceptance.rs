//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::io::Cursor;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::Value;

use threadkb::baselines::{recursive_chunk, ChunkConfig, ChunkIndex, Bench};
use threadkb::corpus;
use threadkb::gateway::{Embedder, HashingEmbedder};
use threadkb::kb::{KnowledgeBase, Scope};
use threadkb::lu::{import_paper_json, read_lus, write_lus, Dialect, LinkerToken, LuType, MetaData, FormatTag};
use threadkb::metrics::{action_item_prf, compute_metrics, default_matcher, EvalRecord, MetricsReport, Paradigm, StepOutcome};
use threadkb::pipeline::{extract_lus, parse_structured_doc, TemplateRules};
use threadkb::session::{Engine, SessionConfig, SessionStatus, TurnInput};
use threadkb::text::{TokenCounter, WordPunctCounter};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corpus_engine() -> Result<Engine<f64>, String> {
    let e = corpus::embedder::<f64>();
    let (kb, _) = corpus::build_kb(e.clone()).map_err(|e| e.to_string())?;
    Ok(Engine::new(Arc::new(kb), Some(e), SessionConfig::default()))
}

fn lu_round_trip() -> Check {
    let t0 = Instant::now();
    let mut rng = common::rng(7);
    let lus: Vec<_> = (0..1000).map(|_| common::random_lu(&mut rng)).collect();
    for dialect in [Dialect::Normalized, Dialect::Paper] {
        let mut first = Vec::new();
        write_lus(&mut first, &lus, dialect).map_err(|e| e.to_string())?;
        let back = read_lus(Cursor::new(&first)).map_err(|e| format!("{dialect:?}: {e}"))?;
        ensure(back == lus, || format!("{dialect:?}: import(export(lus)) differs"))?;
        let mut second = Vec::new();
        write_lus(&mut second, &back, dialect).map_err(|e| e.to_string())?;
        ensure(first == second, || format!("{dialect:?}: re-export is not byte-identical"))?;
    }
    ensure(lus.iter().all(|l| l.id == l.content_id()), || "id is not the content hash".into())?;
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 units, both dialects, {elapsed:.2?}"))
}

fn reference_fixture() -> Check {
    let meta = MetaData {
        source_doc_id: "icm-a2b".into(),
        title: "How to Investigate Service A-To-Service B Connection".into(),
        date: String::new(),
        format_tag: FormatTag::Structured,
    };
    let sdoc = parse_structured_doc(include_str!("../fixtures/icm/reformulated.md"), meta).map_err(|e| e.to_string())?;
    let ex = extract_lus(&sdoc, &TemplateRules::default()).map_err(|e| e.to_string())?;
    ensure(ex.lus.len() == 1, || format!("{} units", ex.lus.len()))?;
    let got = &ex.lus[0];
    ensure(got.lu_type == LuType::Step, || format!("type {}", got.lu_type))?;
    ensure(got.header == "Check Pull Task Execution From the Cluster.", || format!("header {:?}", got.header))?;
    let tokens: Vec<_> = got.linker.iter().map(|b| b.token.known()).collect();
    use LinkerToken::*;
    ensure(tokens == [Some(Mitigate), Some(Mitigate), Some(Continue), Some(Mitigate)], || format!("tokens {tokens:?}"))?;
    for p in ["<TIME>", "<CLUSTER NAME>"] {
        ensure(got.default_parameters.contains_key(p), || format!("no default for {p}"))?;
    }
    let mut expected = import_paper_json(include_str!("../fixtures/icm/reference_lu.json")).map_err(|e| e.to_string())?;
    expected.id = got.id.clone();
    ensure(*got == expected, || format!("field mismatch:\n got {got:?}\nwant {expected:?}"))?;
    Ok("4 branches, 2 defaults, equal modulo id".into())
}

fn linker_closure() -> Check {
    let engine = corpus_engine()?;
    let kb = engine.kb();
    let docs = kb.doc_ids().len();
    ensure(docs == 5, || format!("{docs} documents"))?;
    let mut branches = 0;
    for lu in kb.units().iter().filter(|l| l.lu_type == LuType::Step) {
        for b in &lu.linker {
            branches += 1;
            ensure(b.token.known().is_some(), || format!("{:?}: branch {:?} has token {:?}", lu.header, b.condition, b.token))?;
        }
    }
    Ok(format!("{branches} branches over {} units", kb.len()))
}

/// Independent bag-of-words hashing and cosine scan.
fn oracle_vector(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0f64; dim];
    for tok in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in tok.to_lowercase().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        v[(h % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().fold(0.0, |a, x| a + x * x).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn retrieval_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = common::rng(11);
    let units: Vec<_> = (0..500).map(|_| common::random_lu(&mut rng)).collect();
    let e = HashingEmbedder::new(256);
    let kb = KnowledgeBase::<f64>::build(units, Some(&e as &dyn Embedder<f64>)).map_err(|e| e.to_string())?;
    let headers: Vec<(String, Vec<f64>)> = kb.units().iter().map(|u| (u.id.clone(), oracle_vector(&u.header, 256))).collect();
    for q in 0..200 {
        let query = if q % 4 == 0 { common::header(&mut rng) } else { common::phrase(&mut rng, 1, 6) };
        let k = *[1usize, 5, 10, 500].choose(&mut rng).unwrap();
        let qv = oracle_vector(&query, 256);
        let mut want: Vec<(f64, &str)> = headers
            .iter()
            .map(|(id, hv)| (hv.iter().zip(&qv).fold(0.0, |a, (x, y)| a + x * y), id.as_str()))
            .collect();
        want.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        let want: Vec<&str> = want.iter().take(k).map(|w| w.1).collect();
        let got = kb.retrieve(&query, k, Some(&e), &Scope::all()).map_err(|e| e.to_string())?;
        let got: Vec<&str> = got.iter().map(|h| h.lu_id.as_str()).collect();
        ensure(got == want, || format!("query {query:?} k={k}: ranking differs"))?;
    }
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(2), || format!("took {elapsed:?}"))?;
    Ok(format!("200 queries over 500 units, {elapsed:.2?}"))
}

fn session_liveness() -> Check {
    let engine = corpus_engine()?;
    let max = engine.config().max_turns;
    let questions: Vec<String> = corpus::tasks().into_iter().map(|t| t.question).collect();
    let mut rng = common::rng(13);
    let mut statuses = BTreeSet::new();
    let mut mitigate_matches = 0;
    for i in 0..1000 {
        let question = if rng.random_bool(0.6) { questions.choose(&mut rng).unwrap().clone() } else { common::phrase(&mut rng, 2, 10) };
        let id = format!("fuzz-{i}");
        let state = common::drive(&engine, &id, &question, &mut rng)?;
        ensure(state.turn_count <= max, || format!("{id}: {} turns", state.turn_count))?;
        for t in state.transcript() {
            if t.branch_token.as_deref() == Some(LinkerToken::Mitigate.as_str()) {
                mitigate_matches += 1;
                ensure(t.status == SessionStatus::Mitigated, || format!("{id} turn {}: MITIGATE match left status {}", t.turn, t.status))?;
            }
        }
        let replayed = engine.replay(&id, state.transcript()).map_err(|e| format!("{id}: {e}"))?;
        ensure(replayed == state, || format!("{id}: replayed state differs"))?;
        statuses.insert(state.status.as_str());
    }
    Ok(format!("1000 sessions, {mitigate_matches} MITIGATE matches, end states {statuses:?}"))
}

fn scripted_two_step() -> Check {
    let engine = corpus_engine()?.with_gateway(corpus::gateway());
    let (mut s, r) = engine
        .start("two-step", "Web host web-017 alerts on high load. How do I check the server load?")
        .map_err(|e| e.to_string())?;
    let mut r = r;
    if s.status == SessionStatus::AwaitingClarification {
        r = engine.answer_clarification(&mut s, "yes, I have access to the server monitor").map_err(|e| e.to_string())?;
    }
    ensure(r.header.as_deref() == Some("Check the server load."), || format!("first step {:?}", r.header))?;
    let r = engine.submit_feedback(&mut s, "the server load is high").map_err(|e| e.to_string())?;
    ensure(r.header.as_deref() == Some("Optimize the Server Configuration."), || format!("second step {:?}", r.header))?;
    let r = engine.submit_feedback(&mut s, "the load returns to normal").map_err(|e| e.to_string())?;
    ensure(r.status == SessionStatus::Mitigated, || format!("final status {}", r.status))?;
    let fb: Vec<_> = s.transcript().iter().filter(|t| matches!(t.input, TurnInput::Feedback { .. })).collect();
    let tokens: Vec<_> = fb.iter().map(|t| t.branch_token.as_deref().unwrap_or("-")).collect();
    ensure(tokens == ["CONTINUE", "MITIGATE"], || format!("feedback tokens {tokens:?}"))?;
    Ok(format!("CONTINUE then MITIGATE in {} feedback turns", fb.len()))
}

fn metrics_oracle() -> Check {
    let records: Vec<EvalRecord> = include_str!("../fixtures/metrics/records.jsonl")
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    ensure(records.len() == 50, || format!("{} records", records.len()))?;
    let oracle: Value = serde_json::from_str(include_str!("../fixtures/metrics/oracle.json")).map_err(|e| e.to_string())?;
    let r: MetricsReport<f64> = compute_metrics(&records).map_err(|e| e.to_string())?;
    let got = [
        ("sr", r.sr),
        ("step_sr", r.step_sr),
        ("pf_step_sr", r.pf_step_sr),
        ("hi", r.hi),
        ("mean_turns", r.mean_turns),
        ("mean_tokens_per_turn", r.mean_tokens_per_turn),
        ("precision", r.precision),
        ("recall", r.recall),
        ("f1", r.f1),
    ];
    for (k, v) in got {
        let want = oracle[k].as_f64().ok_or_else(|| format!("oracle lacks {k}"))?;
        ensure((v - want).abs() <= 1e-9, || format!("{k}: {v} vs {want}"))?;
    }

    let ssfs = EvalRecord {
        task_id: "ssfs".into(),
        paradigm: Paradigm::Thread,
        steps: [true, true, false, true].iter().map(|&s| StepOutcome::new(s, !s)).collect(),
        turns: 4,
        final_status: SessionStatus::Escalated,
        retrieved_tokens: 0,
        retrieval_turns: 0,
        generated_items: Vec::new(),
        truth_items: Vec::new(),
    };
    let r: MetricsReport<f64> = compute_metrics(&[ssfs]).map_err(|e| e.to_string())?;
    ensure(r.step_sr == 0.75 && r.pf_step_sr == 0.5, || format!("[S,S,F,S]: {} {}", r.step_sr, r.pf_step_sr))?;

    let truth: Vec<String> = ["restart the pull agent", "renew the certificate", "add the database index", "fail over traffic", "drain the node"]
        .map(String::from)
        .to_vec();
    let generated: Vec<String> = ["renew the certificate", "restart pull agent", "drain the node", "reboot the router"].map(String::from).to_vec();
    let prf = action_item_prf::<f64>(&generated, &truth, &default_matcher);
    ensure(
        (prf.precision - 0.75).abs() < 1e-12 && (prf.recall - 0.60).abs() < 1e-12 && (prf.f1 - 0.6667).abs() <= 5e-5,
        || format!("P/R/F1 {} {} {}", prf.precision, prf.recall, prf.f1),
    )?;
    Ok(format!("9 quantities within 1e-9; P/R/F1 = ({}, {}, {:.4})", prf.precision, prf.recall, prf.f1))
}

fn runs(bench: &Bench<f64>) -> Result<Vec<(Paradigm, Vec<threadkb::baselines::ParadigmRun>)>, String> {
    let tasks = corpus::tasks();
    Paradigm::ALL.iter().map(|&p| bench.run_all(p, &tasks).map(|r| (p, r)).map_err(|e| format!("{p}: {e}"))).collect()
}

fn bench() -> Result<Bench<f64>, String> {
    let engine = corpus_engine()?;
    let e = corpus::embedder::<f64>();
    Bench::new(engine, corpus::documents(), &ChunkConfig::howto(), Some(e)).map_err(|e| e.to_string())
}

fn report(runs: &[(Paradigm, Vec<threadkb::baselines::ParadigmRun>)], p: Paradigm) -> Result<MetricsReport<f64>, String> {
    let recs: Vec<EvalRecord> = runs.iter().find(|r| r.0 == p).unwrap().1.iter().map(|r| r.record.clone()).collect();
    compute_metrics(&recs).map_err(|e| e.to_string())
}

fn compression() -> Check {
    let bench = bench()?;
    let lus = bench.engine().kb().len();
    let chunks = bench.chunk_index().chunks().len();
    ensure((lus as f64) < 0.6 * chunks as f64, || format!("{lus} units vs {chunks} chunks"))?;
    let runs = runs(&bench)?;
    let thread = report(&runs, Paradigm::Thread)?.mean_tokens_per_turn;
    let chunk = report(&runs, Paradigm::Chunk)?.mean_tokens_per_turn;
    ensure(thread < 0.6 * chunk, || format!("tokens per turn {thread:.1} vs {chunk:.1}"))?;
    Ok(format!("{lus} units / {chunks} chunks = {:.3}; tokens per turn {thread:.1} / {chunk:.1} = {:.3}", lus as f64 / chunks as f64, thread / chunk))
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default()
}

fn baseline_parity() -> Check {
    let bench = bench()?;
    let runs = runs(&bench)?;
    let reference = serde_json::to_value(&runs[0].1[0].record).map_err(|e| e.to_string())?;
    let turn_ref = serde_json::to_value(&runs[0].1[0].transcript[0]).map_err(|e| e.to_string())?;
    for (p, rs) in &runs {
        ensure(rs.len() == corpus::tasks().len(), || format!("{p}: {} records", rs.len()))?;
        for r in rs {
            let v = serde_json::to_value(&r.record).map_err(|e| e.to_string())?;
            ensure(keys(&v) == keys(&reference), || format!("{p} {}: record fields differ", r.record.task_id))?;
            ensure(r.record.paradigm == *p, || format!("{p} {}: paradigm tag", r.record.task_id))?;
            for t in &r.transcript {
                let tv = serde_json::to_value(t).map_err(|e| e.to_string())?;
                ensure(keys(&tv) == keys(&turn_ref), || format!("{p} {}: transcript fields differ", r.record.task_id))?;
            }
        }
    }
    let thread = report(&runs, Paradigm::Thread)?.pf_step_sr;
    let chunk = report(&runs, Paradigm::Chunk)?.pf_step_sr;
    let doc = report(&runs, Paradigm::Doc)?.pf_step_sr;
    ensure(thread >= chunk, || format!("pf_step_sr thread {thread:.3} < chunk {chunk:.3}"))?;
    Ok(format!("pf_step_sr thread {thread:.3}, chunk {chunk:.3}, doc {doc:.3}"))
}

fn chunker_soundness() -> Check {
    let mut rng = common::rng(17);
    let counter = WordPunctCounter;
    let mut total = 0;
    for d in 0..100 {
        let text = common::random_doc(&mut rng);
        let size = rng.random_range(5..400);
        let cfg = ChunkConfig::new(size, rng.random_range(0..size)).map_err(|e| e.to_string())?;
        let chunks = recursive_chunk(&format!("d{d}"), &text, &cfg, &counter).map_err(|e| e.to_string())?;
        let chars: Vec<char> = text.chars().collect();
        let mut covered = vec![false; chars.len()];
        for c in &chunks {
            ensure(counter.count(&c.text) <= size, || format!("doc {d}: chunk {} has {} > {size} tokens", c.id, counter.count(&c.text)))?;
            let slice: String = chars[c.start..c.end].iter().collect();
            ensure(slice == c.text, || format!("doc {d}: chunk {} is not the slice {}..{}", c.id, c.start, c.end))?;
            covered[c.start..c.end].iter_mut().for_each(|x| *x = true);
        }
        let lost = chars.iter().zip(&covered).filter(|(ch, cov)| !ch.is_whitespace() && !**cov).count();
        ensure(lost == 0, || format!("doc {d}: {lost} characters in no chunk"))?;
        total += chunks.len();
    }
    let idx = ChunkIndex::<f64>::from_docs(&corpus::documents(), &ChunkConfig::web(), &counter, None).map_err(|e| e.to_string())?;
    ensure(!idx.chunks().is_empty(), || "corpus yields no chunks".into())?;
    Ok(format!("100 documents, {total} chunks"))
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 10] = [
        ("lu round-trip", lu_round_trip),
        ("reference fixture extraction", reference_fixture),
        ("linker-token closure", linker_closure),
        ("retrieval determinism and exactness", retrieval_oracle),
        ("session liveness", session_liveness),
        ("scripted end-to-end", scripted_two_step),
        ("metrics oracle", metrics_oracle),
        ("compression direction", compression),
        ("baseline parity", baseline_parity),
        ("chunker soundness", chunker_soundness),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
