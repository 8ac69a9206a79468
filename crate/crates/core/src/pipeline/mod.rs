//! Source documents to logic units: reformulation, structured parsing,
//! extraction with code templates, merging, and knowledge-base updates.

mod code_template;
mod extract;
mod manifest;
mod merge;
pub mod prompts;
mod reformulate;
mod structured;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{Embedder, Gateway, GatewayError};
use crate::kb::{KbError, KnowledgeBase};
use crate::lu::{LinkerParseError, LogicUnit, SourceDocument, ValidationReport};
use crate::scalar::Scalar;

pub use code_template::{
    extract_code_template, extract_code_template_gateway, template_body, CodeTemplate, ParamPattern, PatternSpec,
    TemplateRules,
};
pub use extract::{extract_lus, extract_lus_with, Extraction, Templating};
pub use manifest::{load_dir, load_manifest, Manifest, ManifestEntry};
pub use merge::{merge_lus, resolve_unique, MergeOutcome, MergePolicy};
pub use reformulate::{parse_reply, reformulate, to_json, ReformulateMode, ReformulateOptions, Reformulation};
pub use structured::{
    merge_refinement, parse_structured_doc, render_structured_doc, Section, SectionCategory, StructuredDoc,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("unstructured input: no Terminology/FAQ/STEP/Appendix sections found; reformulate the document first")]
    Unstructured,
    #[error("section {section}: STEP is missing its {missing} block")]
    IncompleteStep { section: usize, missing: &'static str },
    #[error("document {0} is empty")]
    EmptyDocument(String),
    #[error("reformulation of {0} produced no sections")]
    NoSections(String),
    #[error("section {section}: {error}")]
    Linker { section: usize, error: LinkerParseError },
    #[error("section {section}: {report}")]
    Invalid { section: usize, report: ValidationReport },
    #[error("model gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("knowledge base: {0}")]
    Kb(#[from] KbError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("document {doc}: {source}")]
    InDocument { doc: String, source: Box<PipelineError> },
}

impl PipelineError {
    /// The innermost error, without document context.
    pub fn root(&self) -> &PipelineError {
        match self {
            PipelineError::InDocument { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_gateway_unavailable(&self) -> bool {
        matches!(self.root(), PipelineError::Gateway(g) | PipelineError::Kb(KbError::Embedding(g)) if g.is_unavailable())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub reformulate: ReformulateOptions,
    pub merge: MergePolicy,
    /// Extra code-template parameter patterns.
    pub template_patterns: Vec<PatternSpec>,
    /// Ask the model for code templates instead of the rules.
    pub model_code_templates: bool,
}

impl PipelineConfig {
    pub fn new() -> Self {
        Self { reformulate: ReformulateOptions::new(ReformulateMode::Auto), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DocReport {
    pub doc_id: String,
    pub lu_ids: Vec<String>,
    pub sections: usize,
    pub extracted: usize,
    pub warnings: Vec<String>,
    pub model_calls: usize,
}

impl DocReport {
    pub fn lu_count(&self) -> usize {
        self.lu_ids.len()
    }
}

/// The document-to-LU pipeline bound to a gateway and an embedder.
#[derive(Clone)]
pub struct Pipeline<S: Scalar> {
    config: PipelineConfig,
    rules: TemplateRules,
    gateway: Gateway,
    embedder: Arc<dyn Embedder<S>>,
}

impl<S: Scalar> Pipeline<S> {
    pub fn new(config: PipelineConfig, gateway: Gateway, embedder: Arc<dyn Embedder<S>>) -> Result<Self, PipelineError> {
        config.merge.validate()?;
        let rules = TemplateRules::default()
            .with_specs(&config.template_patterns)
            .map_err(|e| PipelineError::Config(format!("template pattern: {e}")))?;
        Ok(Self { config, rules, gateway, embedder })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder<S>> {
        &self.embedder
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Reformulate (if needed), parse, extract, and merge one document.
    pub fn process(&self, doc: &SourceDocument) -> Result<(Vec<LogicUnit>, DocReport), PipelineError> {
        self.process_inner(doc).map_err(|e| PipelineError::InDocument { doc: doc.id.clone(), source: Box::new(e) })
    }

    fn process_inner(&self, doc: &SourceDocument) -> Result<(Vec<LogicUnit>, DocReport), PipelineError> {
        let r = reformulate(doc, &self.gateway, &self.config.reformulate)?;
        let templating = if self.config.model_code_templates {
            Templating::Gateway(&self.gateway, &self.rules)
        } else {
            Templating::Rules(&self.rules)
        };
        let ex = extract_lus_with(&r.doc, templating)?;
        let extracted = ex.lus.len();
        let merged = merge_lus(ex.lus, &self.config.merge, self.embedder.as_ref())?;
        let mut warnings = r.warnings;
        warnings.extend(ex.warnings);
        warnings.extend(merged.warnings);
        let report = DocReport {
            doc_id: doc.id.clone(),
            lu_ids: merged.lus.iter().map(|u| u.id.clone()).collect(),
            sections: r.doc.sections.len(),
            extracted,
            warnings,
            model_calls: r.model_calls,
        };
        Ok((merged.lus, report))
    }

    /// Processes every document and builds a fresh snapshot. With
    /// cross-document merging enabled, a final merge runs over the union.
    pub fn build(&self, docs: &[SourceDocument]) -> Result<(KnowledgeBase<S>, Vec<DocReport>), PipelineError> {
        let mut all = Vec::new();
        let mut reports = Vec::with_capacity(docs.len());
        for d in docs {
            let (lus, rep) = self.process(d)?;
            all.extend(lus);
            reports.push(rep);
        }
        if self.config.merge.cross_document {
            let merged = merge_lus(all, &self.config.merge, self.embedder.as_ref())?;
            all = merged.lus;
        }
        let kb = KnowledgeBase::build(all, Some(self.embedder.as_ref()))?;
        Ok((kb, reports))
    }

    /// Replaces all units of `doc` in `kb`. On any failure the input
    /// snapshot is untouched and an error is returned.
    pub fn update_kb(
        &self,
        kb: &KnowledgeBase<S>,
        doc: &SourceDocument,
    ) -> Result<(KnowledgeBase<S>, DocReport), PipelineError> {
        let (lus, report) = self.process(doc)?;
        let next = kb.replace_doc(&doc.id, lus, Some(self.embedder.as_ref()))?;
        Ok((next, report))
    }
}
