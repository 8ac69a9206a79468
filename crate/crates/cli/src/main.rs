mod commands;
mod config;
mod repl;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use threadkb::lu::Dialect;
use threadkb::session::Mode;

/// Logic-unit knowledge bases for multi-turn how-to question answering.
#[derive(Parser, Debug)]
#[command(name = "threadkb", version)]
pub struct Cli {
    /// TOML settings file.
    #[arg(long, global = true, env = "THREADKB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Knowledge-base file (overrides the config file).
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

/// Where documents come from; the bundled corpus when neither is given.
#[derive(Args, Debug, Clone, Default)]
pub struct Source {
    /// JSON manifest listing documents.
    #[arg(long, conflicts_with = "dir")]
    pub manifest: Option<PathBuf>,
    /// Directory of markdown/text documents.
    #[arg(long)]
    pub dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ChunkArgs {
    /// Chunk size in tokens.
    #[arg(long)]
    pub size: Option<usize>,
    /// Overlap in tokens.
    #[arg(long)]
    pub overlap: Option<usize>,
    /// web (1000/50), incident (2000/100) or howto (300/30).
    #[arg(long, conflicts_with_all = ["size", "overlap"])]
    pub preset: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParadigmArg {
    Chunk,
    Doc,
    Thread,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the document pipeline and write a knowledge base.
    Ingest {
        #[command(flatten)]
        source: Source,
        /// Mock chat script (overrides the config file).
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Build a knowledge base from an LU interchange file.
    Build {
        /// JSON-lines LU file.
        lus: PathBuf,
    },
    /// Retrieve logic units by header similarity.
    Query {
        text: String,
        #[arg(long, short)]
        k: Option<usize>,
        /// Restrict to one source document.
        #[arg(long)]
        doc: Option<String>,
    },
    /// Interactive troubleshooting session on the terminal.
    Session {
        /// The how-to question; read from the first input line when omitted.
        question: Option<String>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        max_turns: Option<u32>,
        /// Write the transcript here as JSON lines when the session ends.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Split documents into chunks for the chunk baseline.
    Chunk {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        chunk: ChunkArgs,
        /// Output file (JSON lines); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run scripted tasks under one or all paradigms.
    Bench {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        chunk: ChunkArgs,
        #[arg(long, value_enum, default_value = "all")]
        paradigm: ParadigmArg,
        /// Task scripts (JSON); the bundled tasks when omitted.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Tasks run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Evaluation records (JSON lines).
        #[arg(long, default_value = "records.jsonl")]
        out: PathBuf,
        /// Directory for per-task transcripts.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Aggregate evaluation records into the metrics table.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write the knowledge base's units as an interchange file.
    Export {
        #[arg(long, default_value = "normalized")]
        dialect: Dialect,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Knowledge-base statistics against the chunk baseline.
    Stats {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        chunk: ChunkArgs,
    },
}

/// Bad flags, settings or inputs: exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<Usage>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
