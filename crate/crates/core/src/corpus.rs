//! A bundled five-guide synthetic corpus with scripted reformulations and
//! evaluation tasks, usable without any model or network access.
//!
//! The same files live under `corpus/` in the crate for the CLI.

use std::sync::Arc;

use crate::gateway::{Embedder, Gateway, HashingEmbedder, ScriptedChat};
use crate::lu::{FormatTag, SourceDocument};
use crate::pipeline::{DocReport, Manifest, Pipeline, PipelineConfig, PipelineError};
use crate::scalar::Scalar;
use crate::session::TaskScript;
use crate::kb::KnowledgeBase;

struct Guide {
    id: &'static str,
    raw: &'static str,
    structured: &'static str,
}

const GUIDES: [Guide; 5] = [
    Guide {
        id: "icm-a2b",
        raw: include_str!("../corpus/docs/icm-a2b.md"),
        structured: include_str!("../corpus/structured/icm-a2b.md"),
    },
    Guide {
        id: "server-load",
        raw: include_str!("../corpus/docs/server-load.md"),
        structured: include_str!("../corpus/structured/server-load.md"),
    },
    Guide {
        id: "tls-rotation",
        raw: include_str!("../corpus/docs/tls-rotation.md"),
        structured: include_str!("../corpus/structured/tls-rotation.md"),
    },
    Guide {
        id: "regional-network",
        raw: include_str!("../corpus/docs/regional-network.md"),
        structured: include_str!("../corpus/structured/regional-network.md"),
    },
    Guide {
        id: "deploy-stuck",
        raw: include_str!("../corpus/docs/deploy-stuck.md"),
        structured: include_str!("../corpus/structured/deploy-stuck.md"),
    },
];

const MANIFEST: &str = include_str!("../corpus/manifest.json");
const TASKS: &str = include_str!("../corpus/tasks.json");

/// The raw guides, as listed in the bundled manifest.
pub fn documents() -> Vec<SourceDocument> {
    let manifest = Manifest::from_json(MANIFEST).expect("bundled manifest parses");
    manifest
        .documents
        .into_iter()
        .map(|e| {
            let g = GUIDES.iter().find(|g| g.id == e.id).expect("bundled guide listed");
            SourceDocument { id: e.id, title: e.title, raw_text: g.raw.to_string(), format_tag: e.format_tag, date: e.date }
        })
        .collect()
}

/// The structured form of each guide, tagged as such.
pub fn structured_documents() -> Vec<SourceDocument> {
    documents()
        .into_iter()
        .map(|mut d| {
            d.raw_text = GUIDES.iter().find(|g| g.id == d.id).map(|g| g.structured.to_string()).unwrap_or_default();
            d.format_tag = FormatTag::Structured;
            d
        })
        .collect()
}

/// Replies for the reformulation prompt of every guide.
pub fn scripted_chat() -> ScriptedChat {
    GUIDES.iter().fold(ScriptedChat::default(), |chat, g| chat.with_reply(format!("reformulate:{}", g.id), g.structured))
}

pub fn gateway() -> Gateway {
    Gateway::new(Arc::new(scripted_chat()))
}

/// Reformulation without the refinement pass, which has no script.
pub fn pipeline_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::new();
    cfg.reformulate.refine = false;
    cfg
}

pub fn embedder<S: Scalar>() -> Arc<dyn Embedder<S>> {
    Arc::new(HashingEmbedder::new(256))
}

pub fn tasks() -> Vec<TaskScript> {
    TaskScript::load_all(TASKS).expect("bundled tasks parse")
}

/// Runs the pipeline over the bundled guides with the mock gateway.
pub fn build_kb<S: Scalar>(embedder: Arc<dyn Embedder<S>>) -> Result<(KnowledgeBase<S>, Vec<DocReport>), PipelineError> {
    let pipeline = Pipeline::new(pipeline_config(), gateway(), embedder)?;
    pipeline.build(&documents())
}
