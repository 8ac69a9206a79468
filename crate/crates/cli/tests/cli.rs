use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn threadkb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_threadkb"))
        .current_dir(dir)
        .env_remove("THREADKB_CONFIG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn threadkb_stdin(dir: &Path, args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_threadkb"))
        .current_dir(dir)
        .env_remove("THREADKB_CONFIG")
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("json output")
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(threadkb(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(threadkb(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(threadkb(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(threadkb(dir.path(), &["chunk", "--size", "10", "--overlap", "10"]).status.code(), Some(1));
    assert_eq!(threadkb(dir.path(), &["chunk", "--preset", "huge"]).status.code(), Some(1));
    // Missing knowledge base is a runtime failure.
    let o = threadkb(dir.path(), &["query", "check the server load"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingest"));
}

#[test]
fn ingest_query_export_build_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&threadkb(dir.path(), &["--json", "ingest"]));
    assert_eq!(v["total_lus"], 29);
    assert!(dir.path().join("threadkb.kb").exists());

    let v = json(&threadkb(dir.path(), &["--json", "query", "check the server load", "-k", "3"]));
    let hits = v["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0]["header"], "Check the server load.");
    let scores: Vec<f64> = hits.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let v = json(&threadkb(dir.path(), &["--json", "query", "check", "--doc", "tls-rotation", "-k", "10"]));
    assert!(v["hits"].as_array().unwrap().iter().all(|h| h["doc"] == "tls-rotation"));

    let o = threadkb(dir.path(), &["export", "--out", "lus.jsonl"]);
    assert!(o.status.success());
    let v = json(&threadkb(dir.path(), &["--json", "--kb", "rebuilt.kb", "build", "lus.jsonl"]));
    assert_eq!(v["total_lus"], 29);
    let a = json(&threadkb(dir.path(), &["--json", "query", "rotate the certificate"]));
    let b = json(&threadkb(dir.path(), &["--json", "--kb", "rebuilt.kb", "query", "rotate the certificate"]));
    assert_eq!(a, b);
}

#[test]
fn stats_report_units_against_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&threadkb(dir.path(), &["--json", "stats"]));
    assert_eq!(v["stats"]["lu_count"], 29);
    assert_eq!(v["chunks"], 51);
    assert!(v["lu_per_chunk"].as_f64().unwrap() < 0.6);
    let web = json(&threadkb(dir.path(), &["--json", "stats", "--preset", "web"]));
    assert!(web["chunks"].as_u64().unwrap() < 51);
}

#[test]
fn bench_writes_records_and_report_reproduces_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = threadkb(dir.path(), &["bench", "--jobs", "3", "--transcripts", "tx"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    for p in ["chunk", "doc", "thread"] {
        assert!(table.contains(p), "{table}");
    }
    let records = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 30);
    assert_eq!(std::fs::read_dir(dir.path().join("tx")).unwrap().count(), 30);

    let rep = threadkb(dir.path(), &["report", "--in", "records.jsonl", "--csv", "table.csv"]);
    assert!(rep.status.success());
    assert!(table.starts_with(&stdout(&rep)));
    assert!(dir.path().join("table.csv").exists());

    // Parallel and serial runs agree record for record.
    let o = threadkb(dir.path(), &["bench", "--paradigm", "thread", "--out", "serial.jsonl"]);
    assert!(o.status.success());
    let serial = std::fs::read_to_string(dir.path().join("serial.jsonl")).unwrap();
    let parallel: Vec<&str> = records.lines().filter(|l| l.contains("\"paradigm\":\"thread\"")).collect();
    assert_eq!(serial.lines().collect::<Vec<_>>(), parallel);

    let v = json(&threadkb(dir.path(), &["--json", "report", "--in", "serial.jsonl"]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["label"], "thread");
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.toml"), "kb = \"from-file.kb\"\n[chunk]\nsize = 100\noverlap = 10\n").unwrap();
    let o = threadkb(dir.path(), &["--config", "cfg.toml", "ingest"]);
    assert!(o.status.success());
    assert!(dir.path().join("from-file.kb").exists());
    assert!(!dir.path().join("threadkb.kb").exists());

    let file = json(&threadkb(dir.path(), &["--config", "cfg.toml", "--json", "stats"]));
    assert_eq!(file["chunk_size"], 100);
    assert_eq!(file["overlap"], 10);
    let flag = json(&threadkb(dir.path(), &["--config", "cfg.toml", "--json", "stats", "--size", "200"]));
    assert_eq!(flag["chunk_size"], 200);
    assert_eq!(flag["overlap"], 10);

    // The environment variable names the same file.
    let o = Command::new(env!("CARGO_BIN_EXE_threadkb"))
        .current_dir(dir.path())
        .env("THREADKB_CONFIG", "cfg.toml")
        .args(["--json", "stats"])
        .output()
        .unwrap();
    assert_eq!(json(&o)["chunk_size"], 100);

    std::fs::write(dir.path().join("bad.toml"), "chunk_size = 3\n").unwrap();
    assert_eq!(threadkb(dir.path(), &["--config", "bad.toml", "stats"]).status.code(), Some(1));
}

#[test]
fn session_follows_branches_to_mitigation() {
    let dir = tempfile::tempdir().unwrap();
    assert!(threadkb(dir.path(), &["ingest"]).status.success());
    let o = threadkb_stdin(
        dir.path(),
        &["session", "--transcript", "t.jsonl"],
        "Web host web-017 alerts on high load. How do I check the server load?\nyes\n1\n1\n",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("Optimize the Server Configuration"), "{out}");
    assert!(out.trim_end().ends_with("session mitigated"), "{out}");
    let t = std::fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    assert_eq!(t.lines().count(), 4);
    assert!(t.lines().last().unwrap().contains("\"status\":\"mitigated\""));
}

#[test]
fn session_quits_and_respects_turn_budget() {
    let dir = tempfile::tempdir().unwrap();
    assert!(threadkb(dir.path(), &["ingest"]).status.success());
    let o = threadkb_stdin(dir.path(), &["session", "How do I check the server load?"], "yes\n:q\n");
    assert!(o.status.success());
    assert!(stdout(&o).contains("session awaiting_feedback"));

    let o = threadkb_stdin(
        dir.path(),
        &["session", "--max-turns", "2", "How do I check the server load?"],
        "yes\nsomething unrelated\nanother\nmore\n",
    );
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("session exhausted") || out.contains("session escalated"), "{out}");
}
