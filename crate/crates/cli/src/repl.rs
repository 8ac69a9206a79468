//! Line-oriented session loop. A number picks an offered branch, any other
//! line is sent as free-text outcome, `:q` quits.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::Context;

use threadkb::session::{transcript_to_jsonl, SessionState, SessionStatus, TurnResponse};
use threadkb::Engine;

use crate::usage;

fn show(out: &mut impl Write, resp: &TurnResponse) -> std::io::Result<()> {
    writeln!(out, "{}", resp.text.trim_end())?;
    for b in &resp.branches {
        writeln!(out, "  [{}] {} -> {}", b.index + 1, b.condition, b.next_intent)?;
    }
    writeln!(out, "({}, turn {})", resp.status.as_str(), resp.turn)
}

fn read_line(input: &mut impl BufRead) -> std::io::Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim().to_string()))
}

pub fn run(
    engine: &Engine,
    question: Option<String>,
    mut input: impl BufRead,
    mut out: impl Write,
    transcript: Option<&Path>,
) -> anyhow::Result<()> {
    let question = match question {
        Some(q) => q,
        None => {
            write!(out, "question> ")?;
            out.flush()?;
            loop {
                match read_line(&mut input)? {
                    Some(l) if l.is_empty() => continue,
                    Some(l) => break l,
                    None => return Err(usage("no question given")),
                }
            }
        }
    };
    let (mut state, mut resp) = engine.start("cli", &question).map_err(|e| usage(e.to_string()))?;
    show(&mut out, &resp)?;
    while !state.status.is_terminal() {
        write!(out, "> ")?;
        out.flush()?;
        let Some(line) = read_line(&mut input)? else { break };
        if line == ":q" {
            break;
        }
        if line.is_empty() {
            continue;
        }
        match step(engine, &mut state, &resp, &line) {
            Ok(r) => {
                resp = r;
                show(&mut out, &resp)?;
            }
            Err(e) => writeln!(out, "error: {e}")?,
        }
    }
    writeln!(out, "session {}", state.status.as_str())?;
    if let Some(p) = transcript {
        std::fs::write(p, transcript_to_jsonl(state.transcript())).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn step(engine: &Engine, state: &mut SessionState, last: &TurnResponse, line: &str) -> Result<TurnResponse, threadkb::SessionError> {
    if state.status == SessionStatus::AwaitingClarification {
        return engine.answer_clarification(state, line);
    }
    let outcome = match line.parse::<usize>() {
        Ok(n) if n >= 1 => last.branches.iter().find(|b| b.index + 1 == n).map_or(line, |b| b.condition.as_str()),
        _ => line,
    };
    engine.submit_feedback(state, outcome)
}
