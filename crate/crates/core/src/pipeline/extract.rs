//! Structured sections to logic units.

use std::collections::BTreeMap;

use super::code_template::{extract_code_template_gateway, template_body, TemplateRules};
use super::structured::{SectionCategory, StructuredDoc};
use super::PipelineError;
use crate::gateway::Gateway;
use crate::lu::{parse_linker_block, parse_linker_lenient, validate_lu, LogicUnit, LuType};
use crate::markdown::fenced_blocks;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extraction {
    pub lus: Vec<LogicUnit>,
    pub warnings: Vec<String>,
}

/// Code-template strategy for bodies.
#[derive(Debug, Clone, Copy)]
pub enum Templating<'a> {
    Rules(&'a TemplateRules),
    /// Model first, rules for blocks the model could not handle.
    Gateway(&'a Gateway, &'a TemplateRules),
}

/// One LU per section, in section order.
pub fn extract_lus(sdoc: &StructuredDoc, rules: &TemplateRules) -> Result<Extraction, PipelineError> {
    extract_lus_with(sdoc, Templating::Rules(rules))
}

pub fn extract_lus_with(sdoc: &StructuredDoc, templating: Templating<'_>) -> Result<Extraction, PipelineError> {
    let mut out = Extraction::default();
    for (i, s) in sdoc.sections.iter().enumerate() {
        let lu_type = s.category.lu_type();
        let header = match s.header.as_deref().map(str::trim) {
            Some(h) if !h.is_empty() => h.to_string(),
            _ if s.category != SectionCategory::Step => s.title.trim().to_string(),
            _ => return Err(PipelineError::IncompleteStep { section: i, missing: "Header" }),
        };
        let raw_body = s.body.as_deref().unwrap_or("").trim();
        let (body, defaults) = match templating {
            Templating::Rules(rules) => {
                let t = template_body(raw_body, rules, &BTreeMap::new());
                (t.template, t.defaults)
            }
            Templating::Gateway(gw, rules) => {
                let (b, d, w) = gateway_template(raw_body, gw, rules, &sdoc.meta.source_doc_id, i);
                out.warnings.extend(w);
                (b, d)
            }
        };
        let linker_text = s.linker.as_deref().unwrap_or("");
        let linker = if lu_type == LuType::Step {
            parse_linker_block(linker_text)
        } else {
            parse_linker_lenient(linker_text)
        }
        .map_err(|error| PipelineError::Linker { section: i, error })?;

        let mut lu = LogicUnit::new(lu_type, sdoc.meta.clone(), header, body);
        lu.prerequisite = s.prerequisite.as_deref().unwrap_or("").trim().to_string();
        lu.linker = linker;
        lu.default_parameters = defaults;
        let report = validate_lu(&lu);
        if !report.is_valid() {
            return Err(PipelineError::Invalid { section: i, report });
        }
        out.warnings
            .extend(report.warnings.iter().map(|w| format!("{} section {i}: {}", sdoc.meta.source_doc_id, w.message)));
        out.lus.push(lu);
    }
    Ok(out)
}

fn gateway_template(
    body: &str,
    gw: &Gateway,
    rules: &TemplateRules,
    doc_id: &str,
    section: usize,
) -> (String, BTreeMap<String, String>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut defaults = BTreeMap::new();
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for (j, b) in fenced_blocks(body).into_iter().enumerate() {
        let code = &body[b.content.clone()];
        out.push_str(&body[last..b.content.start]);
        match extract_code_template_gateway(code, gw, &format!("{doc_id}:{section}:{j}")) {
            Ok(t) => {
                out.push_str(&t.template);
                if !t.template.ends_with('\n') && code.ends_with('\n') {
                    out.push('\n');
                }
                for (k, v) in t.defaults {
                    defaults.entry(k).or_insert(v);
                }
            }
            Err(e) => {
                warnings.push(format!("{doc_id} section {section} block {j}: model template failed ({e}); using rules"));
                let t = template_body(&body[b.span.clone()], rules, &defaults);
                let inner = fenced_blocks(&t.template).into_iter().next().map(|fb| t.template[fb.content].to_string());
                out.push_str(&inner.unwrap_or_else(|| code.to_string()));
                defaults = t.defaults;
            }
        }
        last = b.content.end;
    }
    out.push_str(&body[last..]);
    (out, defaults, warnings)
}
