use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context};
use serde_json::json;

use threadkb::baselines::{recursive_chunk, chunks_to_jsonl, Bench, Chunk, ChunkConfig, ParadigmRun};
use threadkb::corpus;
use threadkb::gateway::{Embedder, Gateway};
use threadkb::kb::{self, kb_stats, Scope};
use threadkb::lu::{read_lus, write_lus};
use threadkb::metrics::{compute_metrics, render_table, to_csv, to_json, EvalRecord, Paradigm, ReportRow};
use threadkb::pipeline::{load_dir, load_manifest, DocReport, PipelineConfig};
use threadkb::session::{transcript_to_jsonl, TaskScript};
use threadkb::text::WordPunctCounter;
use threadkb::{Engine, KnowledgeBase, Pipeline, Real, SourceDocument};

use crate::config::CliConfig;
use crate::{usage, ChunkArgs, Cli, Command, ParadigmArg, Source};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = CliConfig::resolve(cli.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    if let Some(kb) = cli.kb {
        cfg.kb = kb;
    }
    let json = cli.json;
    match cli.command {
        Command::Ingest { source, script } => {
            if let Some(s) = script {
                cfg.gateway.script = Some(s);
            }
            ingest(&cfg, &source, json)
        }
        Command::Build { lus } => build(&cfg, &lus, json),
        Command::Query { text, k, doc } => query(&cfg, &text, k.unwrap_or(5), doc, json),
        Command::Session { question, mode, max_turns, transcript } => {
            if let Some(m) = mode {
                cfg.session.mode = m;
            }
            if let Some(t) = max_turns {
                cfg.session.max_turns = t;
            }
            let engine = engine(&cfg, Arc::new(load_kb(&cfg)?))?;
            let stdin = std::io::stdin();
            crate::repl::run(&engine, question, stdin.lock(), std::io::stdout().lock(), transcript.as_deref())
        }
        Command::Chunk { source, chunk, out } => chunk_cmd(&cfg, &source, &chunk, out.as_deref(), json),
        Command::Bench { source, chunk, paradigm, tasks, jobs, out, transcripts } => {
            bench(&cfg, &source, &chunk, paradigm, tasks.as_deref(), jobs, &out, transcripts.as_deref(), json)
        }
        Command::Report { input, csv } => report(&input, csv.as_deref(), json),
        Command::Export { dialect, out } => {
            let kb = load_kb(&cfg)?;
            match out {
                Some(p) => {
                    let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    let mut w = BufWriter::new(f);
                    write_lus(&mut w, kb.units(), dialect)?;
                    w.flush()?;
                }
                None => write_lus(std::io::stdout().lock(), kb.units(), dialect)?,
            }
            Ok(())
        }
        Command::Stats { source, chunk } => stats(&cfg, &source, &chunk, json),
    }
}

fn embedder(cfg: &CliConfig) -> anyhow::Result<Arc<dyn Embedder<Real>>> {
    cfg.gateway.build_embedder::<Real>().context("building embedder")
}

fn engine(cfg: &CliConfig, kb: Arc<KnowledgeBase>) -> anyhow::Result<Engine> {
    let gateway = cfg.gateway.build_gateway().context("building gateway")?;
    Ok(Engine::new(kb, Some(embedder(cfg)?), cfg.session.clone()).with_gateway(gateway))
}

fn load_kb(cfg: &CliConfig) -> anyhow::Result<KnowledgeBase> {
    if !cfg.kb.exists() {
        bail!("knowledge base {} not found; run `threadkb ingest` first", cfg.kb.display());
    }
    let emb = embedder(cfg)?;
    let (kb, report) = kb::load_with::<Real>(&cfg.kb, Some(&emb.id()))
        .with_context(|| format!("loading {}", cfg.kb.display()))?;
    for w in report.warnings {
        log::warn!("{w}");
    }
    Ok(kb)
}

/// Documents named by the flags plus the gateway and pipeline settings that
/// go with them. The bundled corpus brings its own scripted replies.
fn documents(cfg: &CliConfig, source: &Source) -> anyhow::Result<(Vec<SourceDocument>, Gateway, PipelineConfig)> {
    let docs = match (&source.manifest, &source.dir) {
        (Some(m), _) => load_manifest(m).with_context(|| format!("reading manifest {}", m.display()))?,
        (None, Some(d)) => load_dir(d).with_context(|| format!("reading {}", d.display()))?,
        (None, None) => {
            let gateway = if cfg.gateway.script.is_some() {
                cfg.gateway.build_gateway()?
            } else {
                corpus::gateway()
            };
            return Ok((corpus::documents(), gateway, corpus::pipeline_config()));
        }
    };
    if docs.is_empty() {
        return Err(usage("no documents found"));
    }
    Ok((docs, cfg.gateway.build_gateway().context("building gateway")?, cfg.pipeline.clone()))
}

fn build_from(cfg: &CliConfig, source: &Source) -> anyhow::Result<(Vec<SourceDocument>, KnowledgeBase, Vec<DocReport>)> {
    let (docs, gateway, pcfg) = documents(cfg, source)?;
    let pipeline = Pipeline::new(pcfg, gateway, embedder(cfg)?).map_err(|e| usage(e.to_string()))?;
    let (kb, reports) = pipeline.build(&docs)?;
    Ok((docs, kb, reports))
}

fn chunk_config(cfg: &CliConfig, args: &ChunkArgs) -> anyhow::Result<ChunkConfig> {
    if let Some(p) = &args.preset {
        return ChunkConfig::preset(p).ok_or_else(|| usage(format!("unknown preset {p:?} (expected web|incident|howto)")));
    }
    let size = args.size.unwrap_or(cfg.chunk.size);
    let overlap = args.overlap.unwrap_or(cfg.chunk.overlap);
    ChunkConfig::new(size, overlap).map_err(|e| usage(e.to_string()))
}

fn chunk_docs(docs: &[SourceDocument], cc: &ChunkConfig) -> anyhow::Result<Vec<Chunk>> {
    let counter = WordPunctCounter;
    let mut out = Vec::new();
    for d in docs {
        out.extend(recursive_chunk(&d.id, &d.raw_text, cc, &counter)?);
    }
    Ok(out)
}

fn print_json(v: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn ingest(cfg: &CliConfig, source: &Source, json: bool) -> anyhow::Result<()> {
    let (_, kb, reports) = build_from(cfg, source)?;
    kb::persist(&kb, &cfg.kb).with_context(|| format!("writing {}", cfg.kb.display()))?;
    if json {
        return print_json(&json!({ "kb": cfg.kb, "total_lus": kb.len(), "documents": reports }));
    }
    for r in &reports {
        println!("{}: {} units", r.doc_id, r.lu_count());
        for w in &r.warnings {
            println!("  warning: {w}");
        }
    }
    println!("wrote {} units to {}", kb.len(), cfg.kb.display());
    Ok(())
}

fn build(cfg: &CliConfig, path: &Path, json: bool) -> anyhow::Result<()> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let lus = read_lus(BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let emb = embedder(cfg)?;
    let kb = KnowledgeBase::build(lus, Some(emb.as_ref()))?;
    kb::persist(&kb, &cfg.kb).with_context(|| format!("writing {}", cfg.kb.display()))?;
    if json {
        print_json(&json!({ "kb": cfg.kb, "total_lus": kb.len() }))
    } else {
        println!("wrote {} units to {}", kb.len(), cfg.kb.display());
        Ok(())
    }
}

fn query(cfg: &CliConfig, text: &str, k: usize, doc: Option<String>, json: bool) -> anyhow::Result<()> {
    if text.trim().is_empty() {
        return Err(usage("empty query"));
    }
    if k == 0 {
        return Err(usage("k must be at least 1"));
    }
    let kb = load_kb(cfg)?;
    let emb = embedder(cfg)?;
    let scope = doc.map(Scope::doc).unwrap_or_else(Scope::all);
    let hits = kb.retrieve(text, k, Some(emb.as_ref()), &scope)?;
    if json {
        let items: Vec<_> = hits
            .iter()
            .map(|h| {
                let lu = &kb.units()[h.index];
                json!({ "lu_id": h.lu_id, "score": h.score, "header": lu.header, "type": lu.lu_type, "doc": lu.meta.source_doc_id })
            })
            .collect();
        return print_json(&json!({ "query": text, "hits": items }));
    }
    if hits.is_empty() {
        println!("no results");
    }
    for (rank, h) in hits.iter().enumerate() {
        let lu = &kb.units()[h.index];
        println!("{:>2}. {:.4}  {}  [{}, {}]", rank + 1, h.score, lu.header, lu.lu_type.as_str(), lu.meta.source_doc_id);
    }
    Ok(())
}

fn chunk_cmd(cfg: &CliConfig, source: &Source, args: &ChunkArgs, out: Option<&Path>, json: bool) -> anyhow::Result<()> {
    let cc = chunk_config(cfg, args)?;
    let (docs, _, _) = documents(cfg, source)?;
    let chunks = chunk_docs(&docs, &cc)?;
    let text = chunks_to_jsonl(&chunks);
    match out {
        Some(p) => {
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
            if json {
                print_json(&json!({ "chunks": chunks.len(), "out": p }))?;
            } else {
                println!("wrote {} chunks to {}", chunks.len(), p.display());
            }
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Runs `tasks` on up to `jobs` threads, keeping task order.
fn run_parallel(bench: &Bench<Real>, p: Paradigm, tasks: &[TaskScript], jobs: usize) -> anyhow::Result<Vec<ParadigmRun>> {
    let n = tasks.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<anyhow::Result<ParadigmRun>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = bench.run(p, &tasks[i]).with_context(|| format!("task {} ({p})", tasks[i].id));
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap_or_else(|e| e.into_inner()).into_iter().map(|r| r.expect("every task ran")).collect()
}

#[allow(clippy::too_many_arguments)]
fn bench(
    cfg: &CliConfig,
    source: &Source,
    args: &ChunkArgs,
    paradigm: ParadigmArg,
    tasks: Option<&Path>,
    jobs: usize,
    out: &Path,
    transcripts: Option<&Path>,
    json: bool,
) -> anyhow::Result<()> {
    if jobs == 0 {
        return Err(usage("jobs must be at least 1"));
    }
    let cc = chunk_config(cfg, args)?;
    let tasks = match tasks {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TaskScript::load_all(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => corpus::tasks(),
    };
    if tasks.is_empty() {
        return Err(usage("no tasks"));
    }
    let (docs, kb, _) = build_from(cfg, source)?;
    let engine = engine(cfg, Arc::new(kb))?;
    let bench = Bench::new(engine, docs, &cc, Some(embedder(cfg)?))?;
    let paradigms: Vec<Paradigm> = match paradigm {
        ParadigmArg::Chunk => vec![Paradigm::Chunk],
        ParadigmArg::Doc => vec![Paradigm::Doc],
        ParadigmArg::Thread => vec![Paradigm::Thread],
        ParadigmArg::All => Paradigm::ALL.to_vec(),
    };
    if let Some(dir) = transcripts {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut records_out = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    let mut rows = Vec::new();
    for p in paradigms {
        let runs = run_parallel(&bench, p, &tasks, jobs)?;
        let mut records = Vec::with_capacity(runs.len());
        for run in runs {
            serde_json::to_writer(&mut records_out, &run.record)?;
            records_out.write_all(b"\n")?;
            if let Some(dir) = transcripts {
                let path = dir.join(format!("{}.{}.jsonl", run.record.task_id, p));
                std::fs::write(&path, transcript_to_jsonl(&run.transcript))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            records.push(run.record);
        }
        rows.push(ReportRow::new(p.as_str(), &compute_metrics::<Real>(&records)?));
    }
    records_out.flush()?;
    if json {
        print_json(&to_json(&rows))
    } else {
        print!("{}", render_table(&rows));
        println!("records written to {}", out.display());
        Ok(())
    }
}

fn report(input: &Path, csv: Option<&Path>, json: bool) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let mut records: Vec<EvalRecord> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(line).map_err(|e| usage(format!("{}:{}: {e}", input.display(), i + 1)))?;
        records.push(r);
    }
    let mut rows = Vec::new();
    for p in Paradigm::ALL {
        let group: Vec<EvalRecord> = records.iter().filter(|r| r.paradigm == p).cloned().collect();
        if !group.is_empty() {
            rows.push(ReportRow::new(p.as_str(), &compute_metrics::<Real>(&group)?));
        }
    }
    if rows.is_empty() {
        return Err(usage(format!("{}: no records", input.display())));
    }
    if let Some(path) = csv {
        std::fs::write(path, to_csv(&rows)?).with_context(|| format!("writing {}", path.display()))?;
    }
    if json {
        print_json(&to_json(&rows))
    } else {
        print!("{}", render_table(&rows));
        Ok(())
    }
}

fn stats(cfg: &CliConfig, source: &Source, args: &ChunkArgs, json: bool) -> anyhow::Result<()> {
    let cc = chunk_config(cfg, args)?;
    let (docs, kb, _) = build_from(cfg, source)?;
    let chunks = chunk_docs(&docs, &cc)?.len();
    let st = kb_stats(&kb, &WordPunctCounter);
    let ratio = if chunks == 0 { 0.0 } else { kb.len() as f64 / chunks as f64 };
    if json {
        return print_json(&json!({
            "stats": st,
            "chunks": chunks,
            "chunk_size": cc.chunk_size,
            "overlap": cc.overlap,
            "lu_per_chunk": ratio,
        }));
    }
    println!("documents      {}", st.doc_count);
    println!("logic units    {}", st.lu_count);
    for (t, n) in &st.type_histogram {
        println!("  {t:<12} {n}");
    }
    println!("header tokens  {:.1} mean", st.mean_header_tokens);
    println!("body tokens    {:.1} mean", st.mean_body_tokens);
    println!("chunks         {} ({}/{})", chunks, cc.chunk_size, cc.overlap);
    println!("units/chunks   {ratio:.3}");
    Ok(())
}
