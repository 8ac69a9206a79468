mod common;

use std::io::Cursor;
use std::sync::Arc;

use proptest::prelude::*;

use threadkb::baselines::{recursive_chunk, ChunkConfig};
use threadkb::gateway::{Embedder, HashingEmbedder};
use threadkb::kb::{KnowledgeBase, Scope};
use threadkb::lu::{export_paper_json, import_paper_json, read_lus, write_lus, Dialect, LinkerBranch, LinkerToken, LogicUnit, LuType, MetaData};
use threadkb::metrics::{compute_metrics, EvalRecord, MetricsReport, Paradigm, StepOutcome};
use threadkb::session::{Engine, SessionConfig, SessionStatus};
use threadkb::text::{TokenCounter, WordPunctCounter};

fn record(steps: Vec<(bool, bool)>, turns: u32, tokens: u64, rturns: u32) -> EvalRecord {
    EvalRecord {
        task_id: "t".into(),
        paradigm: Paradigm::Thread,
        steps: steps.into_iter().map(|(s, i)| StepOutcome::new(s, i)).collect(),
        turns,
        final_status: SessionStatus::Mitigated,
        retrieved_tokens: tokens,
        retrieval_turns: rturns,
        generated_items: Vec::new(),
        truth_items: Vec::new(),
    }
}

fn records() -> impl Strategy<Value = Vec<EvalRecord>> {
    prop::collection::vec(
        (prop::collection::vec(any::<(bool, bool)>(), 1..8), 1u32..30, 0u64..5000, 0u32..10)
            .prop_map(|(s, t, k, r)| record(s, t, k, r)),
        1..20,
    )
}

/// Two documents whose steps loop into each other, so random feedback can
/// run into the turn budget.
fn cyclic_engine(max_turns: u32) -> Engine<f64> {
    use LinkerToken::*;
    let meta = |d: &str| MetaData { source_doc_id: d.into(), title: d.into(), ..Default::default() };
    let mut a = LogicUnit::new(LuType::Step, meta("a"), "Check the queue depth.", "Open the queue chart.");
    a.linker = vec![
        LinkerBranch::new("the queue is growing", "Restart the consumer", Continue),
        LinkerBranch::new("the queue is empty", "close the alert", Mitigate),
    ];
    let mut b = LogicUnit::new(LuType::Step, meta("a"), "Restart the consumer.", "Restart the consumer service.");
    b.linker = vec![
        LinkerBranch::new("the consumer is still slow", "Check the queue depth", Continue),
        LinkerBranch::new("the region is degraded", "Check the regional network", Cross),
    ];
    let mut c = LogicUnit::new(LuType::Step, meta("b"), "Check the regional network.", "Open the probe dashboard.");
    c.linker = vec![LinkerBranch::new("the probes are red", "Check the queue depth", Cross)];
    let units: Vec<LogicUnit> = [a, b, c]
        .into_iter()
        .map(|mut l| {
            l.assign_id();
            l
        })
        .collect();
    let e: Arc<dyn Embedder<f64>> = Arc::new(HashingEmbedder::new(256));
    let kb = KnowledgeBase::build(units, Some(e.as_ref())).unwrap();
    Engine::new(Arc::new(kb), Some(e), SessionConfig { max_turns, ..Default::default() })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lu_interchange_is_identity(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = common::rng(seed);
        let lus: Vec<_> = (0..n).map(|_| common::random_lu(&mut rng)).collect();
        for dialect in [Dialect::Normalized, Dialect::Paper] {
            let mut buf = Vec::new();
            write_lus(&mut buf, &lus, dialect).unwrap();
            prop_assert_eq!(&read_lus(Cursor::new(buf)).unwrap(), &lus);
        }
        for lu in &lus {
            let text = export_paper_json(lu);
            prop_assert_eq!(export_paper_json(&import_paper_json(&text).unwrap()), text);
        }
    }

    #[test]
    fn chunks_are_bounded_exact_and_lossless(seed in any::<u64>(), size in 3usize..200, frac in 0.0f64..1.0) {
        let mut rng = common::rng(seed);
        let text = common::random_doc(&mut rng);
        let overlap = ((size as f64) * frac) as usize % size;
        let cfg = ChunkConfig::new(size, overlap).unwrap();
        let chunks = recursive_chunk("d", &text, &cfg, &WordPunctCounter).unwrap();
        let chars: Vec<char> = text.chars().collect();
        let mut covered = vec![false; chars.len()];
        let mut last_start = None;
        for c in &chunks {
            prop_assert!(WordPunctCounter.count(&c.text) <= size);
            prop_assert_eq!(c.token_count, WordPunctCounter.count(&c.text));
            prop_assert_eq!(chars[c.start..c.end].iter().collect::<String>(), c.text.clone());
            prop_assert!(last_start.is_none_or(|s| c.start > s));
            last_start = Some(c.start);
            covered[c.start..c.end].iter_mut().for_each(|x| *x = true);
        }
        prop_assert!(chars.iter().zip(&covered).all(|(ch, cov)| ch.is_whitespace() || *cov));
    }

    #[test]
    fn metric_rates_are_bounded_and_ordered(recs in records()) {
        let r: MetricsReport<f64> = compute_metrics(&recs).unwrap();
        for v in [r.sr, r.step_sr, r.pf_step_sr, r.hi, r.precision, r.recall, r.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.pf_step_sr <= r.step_sr);
        prop_assert!(r.sr <= 1.0);
        prop_assert!(r.mean_turns >= 1.0);
    }

    #[test]
    fn metrics_ignore_record_order(recs in records(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = recs.clone();
        shuffled.shuffle(&mut common::rng(seed));
        let a: MetricsReport<f64> = compute_metrics(&recs).unwrap();
        let b: MetricsReport<f64> = compute_metrics(&shuffled).unwrap();
        for (x, y) in [(a.sr, b.sr), (a.step_sr, b.step_sr), (a.pf_step_sr, b.pf_step_sr), (a.hi, b.hi), (a.mean_turns, b.mean_turns), (a.mean_tokens_per_turn, b.mean_tokens_per_turn)] {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_lies_between_precision_and_recall(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let truth: Vec<String> = (0..rand::Rng::random_range(&mut rng, 0..6)).map(|_| common::phrase(&mut rng, 1, 3)).collect();
        let generated: Vec<String> = (0..rand::Rng::random_range(&mut rng, 0..6)).map(|_| common::phrase(&mut rng, 1, 3)).collect();
        let mut r = record(vec![(true, false)], 1, 0, 0);
        r.truth_items = truth;
        r.generated_items = generated;
        let m: MetricsReport<f64> = compute_metrics(&[r]).unwrap();
        let (lo, hi) = (m.precision.min(m.recall), m.precision.max(m.recall));
        prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);
    }

    #[test]
    fn sessions_end_within_budget_and_replay(seed in any::<u64>(), max_turns in 1u32..8) {
        let engine = cyclic_engine(max_turns);
        let mut rng = common::rng(seed);
        let state = common::drive(&engine, "s", "How do I check the queue depth?", &mut rng).unwrap();
        prop_assert!(state.status.is_terminal());
        prop_assert!(state.turn_count <= max_turns);
        if state.status == SessionStatus::Exhausted {
            prop_assert_eq!(state.turn_count, max_turns);
        }
        prop_assert_eq!(engine.replay("s", state.transcript()).unwrap(), state);
    }

    #[test]
    fn retrieval_is_sorted_scoped_and_stable(seed in any::<u64>(), k in 1usize..20) {
        let mut rng = common::rng(seed);
        let units: Vec<_> = (0..40).map(|_| common::random_lu(&mut rng)).collect();
        let e = HashingEmbedder::new(64);
        let kb = KnowledgeBase::<f64>::build(units, Some(&e as &dyn Embedder<f64>)).unwrap();
        let q = common::header(&mut rng);
        let doc = kb.units()[0].meta.source_doc_id.clone();
        let hits = kb.retrieve(&q, k, Some(&e), &Scope::doc(doc.clone())).unwrap();
        prop_assert!(hits.len() <= k);
        prop_assert!(hits.iter().all(|h| kb.get(&h.lu_id).unwrap().meta.source_doc_id == doc));
        prop_assert!(hits.windows(2).all(|w| w[0].score > w[1].score || (w[0].score == w[1].score && w[0].lu_id < w[1].lu_id)));
        let again = kb.retrieve(&q, k, Some(&e), &Scope::doc(doc)).unwrap();
        prop_assert_eq!(hits, again);
    }
}

#[test]
fn tight_budget_exhausts() {
    let engine = cyclic_engine(3);
    let (mut s, _) = engine.start("s", "How do I check the queue depth?").unwrap();
    engine.submit_feedback(&mut s, "the queue is growing").unwrap();
    let r = engine.submit_feedback(&mut s, "the consumer is still slow").unwrap();
    assert_eq!(r.status, SessionStatus::Exhausted);
    assert_eq!(s.turn_count, 3);
}
