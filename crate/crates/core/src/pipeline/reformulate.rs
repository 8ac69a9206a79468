//! Model-assisted conversion of free-form guides into structured documents.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::prompts;
use super::structured::{merge_refinement, parse_structured_doc, Section, SectionCategory, StructuredDoc};
use super::PipelineError;
use crate::gateway::{parse_json_reply, Gateway};
use crate::lu::{FormatTag, MetaData, SourceDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReformulateMode {
    /// Reformulate unless the document is tagged `structured`.
    #[default]
    Auto,
    Always,
    /// Parse the document as-is.
    Never,
}

impl std::str::FromStr for ReformulateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(ReformulateMode::Auto),
            "always" => Ok(ReformulateMode::Always),
            "never" => Ok(ReformulateMode::Never),
            other => Err(format!("unknown reformulate mode {other:?} (expected auto|always|never)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReformulateOptions {
    pub mode: ReformulateMode,
    /// Run the refinement round after the first reply.
    pub refine: bool,
    /// Few-shot examples inserted into the reformulation prompt.
    pub examples: Vec<String>,
}

impl ReformulateOptions {
    pub fn new(mode: ReformulateMode) -> Self {
        Self { mode, refine: true, examples: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reformulation {
    pub doc: StructuredDoc,
    pub warnings: Vec<String>,
    /// Number of chat completions issued (0 on the skip path).
    pub model_calls: usize,
}

/// Produces the structured form of `doc`.
pub fn reformulate(
    doc: &SourceDocument,
    gateway: &Gateway,
    opts: &ReformulateOptions,
) -> Result<Reformulation, PipelineError> {
    if doc.raw_text.trim().is_empty() {
        return Err(PipelineError::EmptyDocument(doc.id.clone()));
    }
    let skip = match opts.mode {
        ReformulateMode::Never => true,
        ReformulateMode::Auto => doc.format_tag == FormatTag::Structured,
        ReformulateMode::Always => false,
    };
    if skip {
        let sdoc = parse_structured_doc(&doc.raw_text, doc.meta())?;
        return Ok(Reformulation { doc: sdoc, warnings: Vec::new(), model_calls: 0 });
    }

    let meta = doc.meta();
    let ex = |i: usize| opts.examples.get(i).map(String::as_str).unwrap_or("");
    let prompt = format!(
        "{}{}",
        prompts::fill(prompts::REFORMULATE, &[("EXAMPLE_1", ex(0)), ("EXAMPLE_2", ex(1)), ("TSG", &doc.raw_text)]),
        gateway.script_tag("reformulate", &doc.id)
    );
    let draft = gateway.complete_parsed(&prompt, |r| parse_reply(r, &meta, &doc.title))?;
    let mut calls = 1;
    let mut warnings = Vec::new();

    let result = if opts.refine {
        let refine_prompt = format!(
            "{}{}",
            prompts::fill(prompts::REFINE, &[("TSG", &doc.raw_text), ("DRAFT", &to_json(&draft).to_string())]),
            gateway.script_tag("refine", &doc.id)
        );
        calls += 1;
        match gateway.complete_parsed(&refine_prompt, |r| parse_reply(r, &meta, &doc.title)) {
            Ok(refined) => merge_refinement(&draft, &refined),
            Err(e) => {
                warnings.push(format!("refinement skipped for {}: {e}", doc.id));
                draft
            }
        }
    } else {
        draft
    };

    if result.sections.is_empty() {
        return Err(PipelineError::NoSections(doc.id.clone()));
    }
    check_steps(&result)?;
    Ok(Reformulation { doc: result, warnings, model_calls: calls })
}

fn check_steps(doc: &StructuredDoc) -> Result<(), PipelineError> {
    for (i, s) in doc.sections.iter().enumerate() {
        if s.category != SectionCategory::Step {
            continue;
        }
        if s.header.as_deref().is_none_or(|h| h.trim().is_empty()) {
            return Err(PipelineError::IncompleteStep { section: i, missing: "Header" });
        }
        if s.body.as_deref().is_none_or(|b| b.trim().is_empty()) {
            return Err(PipelineError::IncompleteStep { section: i, missing: "Body" });
        }
    }
    Ok(())
}

/// Accepts the JSON shape requested by the prompt (categories mapping to
/// lists of `{prerequisite, header, body, linker}`) or structured markdown.
pub fn parse_reply(reply: &str, meta: &MetaData, title: &str) -> Option<StructuredDoc> {
    if let Some(Value::Object(map)) = parse_json_reply(reply) {
        return from_json(&map, meta, title);
    }
    parse_structured_doc(reply, meta.clone()).ok()
}

fn category_of(key: &str) -> SectionCategory {
    let k = key.trim().to_ascii_lowercase();
    let k = k.strip_suffix('s').unwrap_or(&k);
    match k {
        "step" => SectionCategory::Step,
        "faq" => SectionCategory::Faq,
        "terminology" => SectionCategory::Terminology,
        _ => SectionCategory::Appendix,
    }
}

fn text_of(v: &Value, bullets: bool) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.trim().to_string()),
        Value::Array(items) => {
            let lines: Vec<String> = items
                .iter()
                .filter_map(|i| text_of(i, false))
                .filter(|s| !s.is_empty())
                .map(|s| if bullets && !s.starts_with("- ") { format!("- {s}") } else { s })
                .collect();
            Some(lines.join("\n"))
        }
        other => Some(other.to_string()),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Option<&'a Value> {
    obj.iter()
        .find(|(k, _)| k.trim_matches('#').eq_ignore_ascii_case(name))
        .map(|(_, v)| v)
}

fn from_json(map: &Map<String, Value>, meta: &MetaData, title: &str) -> Option<StructuredDoc> {
    let mut sections = Vec::new();
    for (key, value) in map {
        let category = category_of(key);
        let items = match value {
            Value::Array(items) => items.clone(),
            Value::Object(_) => vec![value.clone()],
            _ => return None,
        };
        for item in items {
            let Value::Object(obj) = item else { return None };
            let header = field(&obj, "header").and_then(|v| text_of(v, false));
            let mut s = Section::new(category, header.clone().unwrap_or_default());
            s.prerequisite = field(&obj, "prerequisite").and_then(|v| text_of(v, false));
            s.header = header;
            s.body = field(&obj, "body").and_then(|v| text_of(v, false));
            s.linker = field(&obj, "linker").and_then(|v| text_of(v, true));
            sections.push(s);
        }
    }
    Some(StructuredDoc { meta: meta.clone(), title: Some(title.to_string()), sections })
}

/// JSON form of a structured document, in the reply shape.
pub fn to_json(doc: &StructuredDoc) -> Value {
    let mut map = Map::new();
    for s in &doc.sections {
        let mut obj = Map::new();
        for (k, v) in [("prerequisite", &s.prerequisite), ("header", &s.header), ("body", &s.body), ("linker", &s.linker)] {
            if let Some(v) = v {
                obj.insert(k.into(), Value::String(v.clone()));
            }
        }
        let entry = map.entry(s.category.as_str()).or_insert_with(|| Value::Array(Vec::new()));
        if let Value::Array(list) = entry {
            list.push(Value::Object(obj));
        }
    }
    Value::Object(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedChat;
    use std::sync::Arc;

    fn source(format_tag: FormatTag, text: &str) -> SourceDocument {
        SourceDocument {
            id: "icm-a2b".into(),
            title: "How to Investigate Service A-To-Service B Connection".into(),
            raw_text: text.into(),
            format_tag,
            date: String::new(),
        }
    }

    const STEP_JSON: &str = r#"{"STEP": [{"prerequisite": "The region and cluster name are given.",
        "header": "Check Pull Task Execution From the Cluster",
        "body": "Run the query.\n```kusto\nT | where Cluster == \"c1\"\n```"}]}"#;

    #[test]
    fn structured_docs_skip_the_model() {
        let gw = Gateway::new(Arc::new(ScriptedChat::default()));
        let doc = source(FormatTag::Structured, include_str!("../../fixtures/icm/reformulated.md"));
        let r = reformulate(&doc, &gw, &ReformulateOptions::new(ReformulateMode::Auto)).unwrap();
        assert_eq!(r.model_calls, 0);
        assert_eq!(r.doc.sections.len(), 1);
    }

    #[test]
    fn reply_becomes_a_step_section() {
        let chat = ScriptedChat::default().with_reply("reformulate:icm-a2b", STEP_JSON);
        let gw = Gateway::new(Arc::new(chat));
        let doc = source(FormatTag::Narrative, include_str!("../../fixtures/icm/original.md"));
        let mut opts = ReformulateOptions::new(ReformulateMode::Auto);
        opts.refine = false;
        let r = reformulate(&doc, &gw, &opts).unwrap();
        let s = &r.doc.sections[0];
        assert_eq!(s.category, SectionCategory::Step);
        assert_eq!(s.header.as_deref(), Some("Check Pull Task Execution From the Cluster"));
    }

    #[test]
    fn refinement_restores_missing_linker() {
        let refined = r#"{"STEP": [{"header": "Check Pull Task Execution From the Cluster",
            "linker": ["If the data point is always above zero, then consider the alert as false alarm.[MITIGATE]"]}]}"#;
        let chat = ScriptedChat::default()
            .with_reply("reformulate:icm-a2b", STEP_JSON)
            .with_reply("refine:icm-a2b", refined);
        let gw = Gateway::new(Arc::new(chat));
        let doc = source(FormatTag::Unknown, "some guide text");
        let r = reformulate(&doc, &gw, &ReformulateOptions::new(ReformulateMode::Auto)).unwrap();
        assert_eq!(r.model_calls, 2);
        let s = &r.doc.sections[0];
        assert!(s.linker.as_deref().unwrap().contains("[MITIGATE]"));
        assert!(s.body.as_deref().unwrap().contains("```kusto"));
        assert_eq!(s.prerequisite.as_deref(), Some("The region and cluster name are given."));
    }

    #[test]
    fn refinement_failure_keeps_draft() {
        let chat = ScriptedChat::default()
            .with_reply("reformulate:icm-a2b", STEP_JSON)
            .with_failure("refine:icm-a2b", "boom");
        let gw = Gateway::new(Arc::new(chat));
        let r = reformulate(&source(FormatTag::Unknown, "x"), &gw, &ReformulateOptions::new(ReformulateMode::Always))
            .unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.doc.sections.len(), 1);
    }

    #[test]
    fn failures_surface() {
        let gw = Gateway::new(Arc::new(ScriptedChat::default().with_reply("reformulate:icm-a2b", "{}")));
        let err = reformulate(&source(FormatTag::Unknown, "x"), &gw, &ReformulateOptions::default()).unwrap_err();
        assert!(matches!(err, PipelineError::NoSections(_)));
        let gw = Gateway::new(Arc::new(ScriptedChat::default().with_reply("reformulate:icm-a2b", "prose only")));
        let err = reformulate(&source(FormatTag::Unknown, "x"), &gw, &ReformulateOptions::default()).unwrap_err();
        assert!(matches!(err, PipelineError::Gateway(_)));
        let err = reformulate(&source(FormatTag::Unknown, " "), &gw, &ReformulateOptions::default()).unwrap_err();
        assert!(matches!(err, PipelineError::EmptyDocument(_)));
    }

    #[test]
    fn json_round_trip() {
        let doc = parse_structured_doc(include_str!("../../fixtures/icm/reformulated.md"), MetaData::default()).unwrap();
        let back = parse_reply(&to_json(&doc).to_string(), &doc.meta, "t").unwrap();
        assert_eq!(back.sections[0].linker, doc.sections[0].linker);
        assert_eq!(back.sections[0].body, doc.sections[0].body);
    }
}
