//! Seeded generators shared by the acceptance suite and the property tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use threadkb::lu::{FormatTag, LinkerBranch, LinkerToken, LogicUnit, LuType, MetaData};
use threadkb::session::{Engine, SessionState, SessionStatus};

pub const WORDS: &[&str] = &[
    "server", "load", "cluster", "region", "pull", "task", "agent", "restart", "deploy", "gate",
    "certificate", "vault", "network", "latency", "probe", "capacity", "index", "query", "cache",
    "worker", "pool", "alert", "backlog", "queue", "disk", "workspace", "build", "release", "token",
    "renew", "failover", "paired", "health", "timeout", "error", "rate", "memory", "cpu", "log",
    "trace", "shard", "replica", "lease", "session", "socket", "route", "dns", "edge", "frontend",
];

pub const VERBS: &[&str] = &["Check", "Inspect", "Restart", "Verify", "Scale", "Renew", "Drain", "Rotate", "Query"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn phrase(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn header(rng: &mut impl Rng) -> String {
    format!("{} the {}", VERBS.choose(rng).unwrap(), phrase(rng, 1, 4))
}

/// A structurally valid unit of any type.
pub fn random_lu(rng: &mut impl Rng) -> LogicUnit {
    let lu_type = *LuType::ALL.choose(rng).unwrap();
    let format_tag = *[FormatTag::Structured, FormatTag::Narrative, FormatTag::Unknown].choose(rng).unwrap();
    let meta = MetaData {
        source_doc_id: format!("doc-{}", rng.random_range(0..20)),
        title: format!("How to {}", header(rng).to_lowercase()),
        date: if rng.random_bool(0.5) { format!("2024-0{}-1{}", rng.random_range(1..10), rng.random_range(0..10)) } else { String::new() },
        format_tag,
    };
    let mut defaults = BTreeMap::new();
    let mut body = format!("Run the {} check.", phrase(rng, 1, 3));
    if rng.random_bool(0.5) {
        let name = format!("<{}>", WORDS.choose(rng).unwrap().to_uppercase());
        body.push_str(&format!("\n```bash\nctl {} --target {name}\n```", WORDS.choose(rng).unwrap()));
        defaults.insert(name, format!("{}-{:02}", WORDS.choose(rng).unwrap(), rng.random_range(0..100)));
    }
    let mut lu = LogicUnit::new(lu_type, meta, header(rng), body);
    if rng.random_bool(0.4) {
        lu.prerequisite = format!("Access to the {}.", phrase(rng, 1, 3));
    }
    if lu_type == LuType::Step {
        for _ in 0..rng.random_range(0..4) {
            let token = *[LinkerToken::Continue, LinkerToken::Cross, LinkerToken::Mitigate].choose(rng).unwrap();
            let cond = format!("the {} is {}", phrase(rng, 1, 2), ["high", "low", "normal", "stuck"].choose(rng).unwrap());
            lu.linker.push(LinkerBranch::new(cond, header(rng), token));
        }
    }
    lu.default_parameters = defaults;
    lu.assign_id();
    lu
}

/// Paragraphs of words and sentences, with occasional long unbroken runs.
pub fn random_doc(rng: &mut impl Rng) -> String {
    let mut out = String::new();
    for p in 0..rng.random_range(1..12) {
        if p > 0 {
            out.push_str(["\n\n", "\n", "\n\n\n"].choose(rng).unwrap());
        }
        if rng.random_bool(0.1) {
            let run: String = (0..rng.random_range(50..400)).map(|_| WORDS.choose(rng).unwrap().chars().next().unwrap()).collect();
            out.push_str(&run);
            continue;
        }
        for s in 0..rng.random_range(1..8) {
            if s > 0 {
                out.push(' ');
            }
            out.push_str(&phrase(rng, 3, 25));
            out.push_str([".", ",", "!", ";", ":"].choose(rng).unwrap());
        }
    }
    out
}

/// Random free-text feedback, or the condition of an offered branch.
pub fn feedback(rng: &mut impl Rng, conditions: &[String]) -> String {
    if !conditions.is_empty() && rng.random_bool(0.5) {
        return conditions.choose(rng).unwrap().clone();
    }
    match rng.random_range(0..4) {
        0 => "it worked".to_string(),
        1 => "no idea".to_string(),
        _ => phrase(rng, 1, 8),
    }
}

/// Drives a session with random inputs until it ends. Returns the final
/// state and the number of calls made; `Err` on a non-terminating run or an
/// engine error.
pub fn drive(engine: &Engine<f64>, id: &str, question: &str, rng: &mut impl Rng) -> Result<SessionState, String> {
    let (mut state, _) = engine.start(id, question).map_err(|e| e.to_string())?;
    let budget = engine.config().max_turns as usize * 3;
    for _ in 0..budget {
        let r = match state.status {
            s if s.is_terminal() => return Ok(state),
            SessionStatus::AwaitingFeedback => {
                let conds: Vec<String> = state
                    .current
                    .as_deref()
                    .and_then(|id| engine.kb().get(id))
                    .map(|lu| lu.linker.iter().map(|b| b.condition.clone()).collect())
                    .unwrap_or_default();
                let text = feedback(rng, &conds);
                engine.submit_feedback(&mut state, &text)
            }
            SessionStatus::AwaitingClarification => {
                let text = ["yes", "no", "I do not have it", "yes I have it"].choose(rng).unwrap().to_string();
                engine.answer_clarification(&mut state, &text)
            }
            other => return Err(format!("session stuck in {other}")),
        };
        r.map_err(|e| e.to_string())?;
    }
    if state.status.is_terminal() {
        Ok(state)
    } else {
        Err(format!("session {id} still {} after {budget} calls", state.status))
    }
}
