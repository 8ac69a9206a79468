//! Corpus manifests: which files to ingest and how they are tagged.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::structured::parse_structured_doc;
use super::PipelineError;
use crate::lu::{FormatTag, MetaData, SourceDocument};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub format_tag: FormatTag,
    pub path: PathBuf,
    #[serde(default)]
    pub date: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub documents: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestShape {
    Wrapped(Manifest),
    List(Vec<ManifestEntry>),
}

impl Manifest {
    /// Accepts `{"documents": [...]}` or a bare list of entries.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let shape: ManifestShape =
            serde_json::from_str(text).map_err(|e| PipelineError::Manifest(format!("malformed manifest: {e}")))?;
        let m = match shape {
            ManifestShape::Wrapped(m) => m,
            ManifestShape::List(documents) => Manifest { documents },
        };
        for (i, d) in m.documents.iter().enumerate() {
            if d.id.trim().is_empty() {
                return Err(PipelineError::Manifest(format!("entry {i} has an empty id")));
            }
            if m.documents[..i].iter().any(|p| p.id == d.id) {
                return Err(PipelineError::Manifest(format!("duplicate document id {:?}", d.id)));
            }
        }
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Reads every listed file, resolving relative paths against `base`.
    pub fn load_documents(&self, base: &Path) -> Result<Vec<SourceDocument>, PipelineError> {
        self.documents
            .iter()
            .map(|d| {
                let path = if d.path.is_absolute() { d.path.clone() } else { base.join(&d.path) };
                let raw_text = std::fs::read_to_string(&path)
                    .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
                if raw_text.trim().is_empty() {
                    return Err(PipelineError::EmptyDocument(d.id.clone()));
                }
                Ok(SourceDocument {
                    id: d.id.clone(),
                    title: d.title.clone(),
                    raw_text,
                    format_tag: d.format_tag,
                    date: d.date.clone(),
                })
            })
            .collect()
    }
}

/// Loads a manifest file and its documents.
pub fn load_manifest(path: &Path) -> Result<Vec<SourceDocument>, PipelineError> {
    let base = path.parent().unwrap_or(Path::new("."));
    Manifest::from_file(path)?.load_documents(base)
}

/// Every `.md`/`.markdown`/`.txt` file in `dir`, sorted by name. Ids are file
/// stems, titles come from the first `# ` heading, and files that already
/// parse as structured documents are tagged `structured`.
pub fn load_dir(dir: &Path) -> Result<Vec<SourceDocument>, PipelineError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::Manifest(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().and_then(|x| x.to_str()).is_some_and(|x| matches!(x, "md" | "markdown" | "txt"))
        })
        .collect();
    paths.sort();
    let mut docs = Vec::with_capacity(paths.len());
    for p in paths {
        let raw_text =
            std::fs::read_to_string(&p).map_err(|e| PipelineError::Manifest(format!("{}: {e}", p.display())))?;
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("doc").to_string();
        let title = raw_text
            .lines()
            .find_map(|l| l.strip_prefix("# "))
            .map(|t| t.trim().to_string())
            .unwrap_or_else(|| id.clone());
        let meta = MetaData { source_doc_id: id.clone(), title: title.clone(), ..Default::default() };
        let format_tag =
            if parse_structured_doc(&raw_text, meta).is_ok() { FormatTag::Structured } else { FormatTag::Unknown };
        docs.push(SourceDocument { id, title, raw_text, format_tag, date: String::new() });
    }
    Ok(docs)
}
