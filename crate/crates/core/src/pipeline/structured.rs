//! Structured troubleshooting documents: second-level sections, each with
//! `### Prerequisite`, `### Header`, `### Body` and `### Linker` sub-blocks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::lu::{LuType, MetaData};
use crate::markdown::fenced_blocks;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SectionCategory {
    Terminology,
    #[serde(rename = "FAQ")]
    Faq,
    #[serde(rename = "STEP")]
    Step,
    Appendix,
}

impl SectionCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            SectionCategory::Terminology => "Terminology",
            SectionCategory::Faq => "FAQ",
            SectionCategory::Step => "STEP",
            SectionCategory::Appendix => "Appendix",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        match word.to_ascii_lowercase().as_str() {
            "terminology" => Some(SectionCategory::Terminology),
            "faq" => Some(SectionCategory::Faq),
            "step" => Some(SectionCategory::Step),
            "appendix" => Some(SectionCategory::Appendix),
            _ => None,
        }
    }

    pub fn lu_type(self) -> LuType {
        match self {
            SectionCategory::Terminology => LuType::Terminology,
            SectionCategory::Faq => LuType::Faq,
            SectionCategory::Step => LuType::Step,
            SectionCategory::Appendix => LuType::Appendix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub category: SectionCategory,
    pub title: String,
    pub prerequisite: Option<String>,
    pub header: Option<String>,
    pub body: Option<String>,
    pub linker: Option<String>,
}

impl Section {
    pub fn new(category: SectionCategory, title: impl Into<String>) -> Self {
        Self { category, title: title.into(), prerequisite: None, header: None, body: None, linker: None }
    }

    fn header_key(&self) -> String {
        crate::text::normalize_heading(self.header.as_deref().unwrap_or(&self.title))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredDoc {
    pub meta: MetaData,
    /// First-level heading, when present.
    pub title: Option<String>,
    pub sections: Vec<Section>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    Prerequisite,
    Header,
    Body,
    Linker,
}

fn block_kind(heading: &str) -> Option<Block> {
    match heading.trim().trim_end_matches(':').trim().to_ascii_lowercase().as_str() {
        "prerequisite" | "prerequisites" => Some(Block::Prerequisite),
        "header" => Some(Block::Header),
        "body" => Some(Block::Body),
        "linker" => Some(Block::Linker),
        _ => None,
    }
}

/// `(level, text)` for an ATX heading line.
fn heading(line: &str) -> Option<(usize, &str)> {
    let t = line.trim_end_matches(['\n', '\r']);
    let level = t.chars().take_while(|&c| c == '#').count();
    if level == 0 || level > 6 {
        return None;
    }
    let rest = &t[level..];
    if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
        return None;
    }
    Some((level, rest.trim()))
}

/// Splits "STEP: title" into an explicit category and the title.
fn explicit_category(heading: &str) -> Option<(SectionCategory, &str)> {
    let word_len = heading.chars().take_while(char::is_ascii_alphabetic).count();
    let cat = SectionCategory::from_keyword(&heading[..word_len])?;
    let rest = heading[word_len..].trim_start();
    if rest.is_empty() {
        return Some((cat, ""));
    }
    let rest = rest.strip_prefix(':').or_else(|| rest.strip_prefix(" - ")).or_else(|| rest.strip_prefix('-'))?;
    Some((cat, rest.trim()))
}

#[derive(Default)]
struct Draft {
    explicit: Option<SectionCategory>,
    title: String,
    prerequisite: Option<String>,
    header: Option<String>,
    body: Option<String>,
    linker: Option<String>,
    has_blocks: bool,
}

impl Draft {
    fn slot(&mut self, b: Block) -> &mut Option<String> {
        match b {
            Block::Prerequisite => &mut self.prerequisite,
            Block::Header => &mut self.header,
            Block::Body => &mut self.body,
            Block::Linker => &mut self.linker,
        }
    }

    fn append(&mut self, b: Block, text: &str) {
        let slot = self.slot(b);
        slot.get_or_insert_with(String::new).push_str(text);
    }

    fn finish(self) -> (Section, bool) {
        let recognized = self.explicit.is_some() || self.has_blocks;
        let category = self.explicit.unwrap_or(if self.linker.is_some() {
            SectionCategory::Step
        } else {
            SectionCategory::Appendix
        });
        let trim = |s: Option<String>| s.map(|t| t.trim().to_string());
        let mut body = trim(self.body);
        if body.as_deref() == Some("") && !self.has_blocks {
            body = None;
        }
        (
            Section {
                category,
                title: self.title,
                prerequisite: trim(self.prerequisite),
                header: trim(self.header),
                body,
                linker: trim(self.linker),
            },
            recognized,
        )
    }
}

/// Deterministic parse of structured markdown.
///
/// Headings inside fenced code are ignored. Third-level headings other than
/// the four sub-block names, and loose text, are appended to the Body.
pub fn parse_structured_doc(markdown: &str, meta: MetaData) -> Result<StructuredDoc, PipelineError> {
    let fences = fenced_blocks(markdown);
    let mut title = None;
    let mut drafts: Vec<Draft> = Vec::new();
    let mut current_block: Option<Block> = None;
    let mut explicit_body = false;

    for (offset, line) in crate::markdown::lines_with_offsets(markdown) {
        let fenced = crate::markdown::in_fence(&fences, offset);
        let h = if fenced { None } else { heading(line) };
        match h {
            Some((1, text)) if drafts.is_empty() && title.is_none() => {
                title = Some(text.to_string());
                continue;
            }
            Some((2, text)) => {
                let mut d = Draft::default();
                match explicit_category(text) {
                    Some((cat, rest)) => {
                        d.explicit = Some(cat);
                        d.title = rest.to_string();
                    }
                    None => d.title = text.to_string(),
                }
                drafts.push(d);
                current_block = None;
                explicit_body = false;
                continue;
            }
            Some((3, text)) if !drafts.is_empty() => {
                if let Some(b) = block_kind(text) {
                    let d = drafts.last_mut().unwrap();
                    d.has_blocks = true;
                    if b == Block::Body && !explicit_body {
                        explicit_body = true;
                    }
                    d.slot(b).get_or_insert_with(String::new);
                    current_block = Some(b);
                    continue;
                }
                current_block = Some(Block::Body);
            }
            _ => {}
        }
        if let Some(d) = drafts.last_mut() {
            d.append(current_block.unwrap_or(Block::Body), line);
        }
    }

    let mut sections = Vec::with_capacity(drafts.len());
    let mut any_recognized = false;
    for d in drafts {
        let (s, recognized) = d.finish();
        any_recognized |= recognized;
        sections.push(s);
    }
    if !any_recognized {
        return Err(PipelineError::Unstructured);
    }
    for (i, s) in sections.iter().enumerate() {
        if s.category == SectionCategory::Step {
            if s.header.as_deref().is_none_or(|h| h.trim().is_empty()) {
                return Err(PipelineError::IncompleteStep { section: i, missing: "Header" });
            }
            if s.body.as_deref().is_none_or(|b| b.trim().is_empty()) {
                return Err(PipelineError::IncompleteStep { section: i, missing: "Body" });
            }
        }
    }
    Ok(StructuredDoc { meta, title, sections })
}

/// Renders back to markdown; `parse_structured_doc` of the output yields the
/// same document.
pub fn render_structured_doc(doc: &StructuredDoc) -> String {
    let mut out = String::new();
    if let Some(t) = &doc.title {
        let _ = writeln!(out, "# {t}\n");
    }
    for s in &doc.sections {
        if s.title.is_empty() {
            let _ = writeln!(out, "## {}\n", s.category.as_str());
        } else {
            let _ = writeln!(out, "## {}: {}\n", s.category.as_str(), s.title);
        }
        for (name, value) in [
            ("Prerequisite", &s.prerequisite),
            ("Header", &s.header),
            ("Body", &s.body),
            ("Linker", &s.linker),
        ] {
            if let Some(v) = value {
                let _ = writeln!(out, "### {name}\n");
                if !v.is_empty() {
                    let _ = writeln!(out, "{v}\n");
                }
            }
        }
    }
    out
}

/// Combines a refined reformulation with the draft it corrects: refined
/// sections win, sub-blocks they omit are taken from the matching draft
/// section, and draft sections absent from the refinement are kept.
pub fn merge_refinement(draft: &StructuredDoc, refined: &StructuredDoc) -> StructuredDoc {
    let mut used = vec![false; draft.sections.len()];
    let mut sections = Vec::with_capacity(refined.sections.len());
    for r in &refined.sections {
        let key = r.header_key();
        let matched = draft
            .sections
            .iter()
            .enumerate()
            .find(|(i, d)| !used[*i] && d.header_key() == key);
        let mut s = r.clone();
        if let Some((i, d)) = matched {
            used[i] = true;
            s.prerequisite = s.prerequisite.or_else(|| d.prerequisite.clone());
            s.header = s.header.or_else(|| d.header.clone());
            s.body = s.body.or_else(|| d.body.clone());
            s.linker = s.linker.or_else(|| d.linker.clone());
        }
        sections.push(s);
    }
    for (i, d) in draft.sections.iter().enumerate() {
        if !used[i] {
            sections.push(d.clone());
        }
    }
    StructuredDoc { meta: draft.meta.clone(), title: refined.title.clone().or_else(|| draft.title.clone()), sections }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const REFORMULATED: &str = include_str!("../../fixtures/icm/reformulated.md");

    fn meta() -> MetaData {
        MetaData { source_doc_id: "icm-a2b".into(), title: "A2B".into(), ..Default::default() }
    }

    #[test]
    fn parses_the_reformulated_example() {
        let doc = parse_structured_doc(REFORMULATED, meta()).unwrap();
        assert_eq!(doc.title.as_deref(), Some("How to Investigate Service A-To-Service B Connection"));
        assert_eq!(doc.sections.len(), 1);
        let s = &doc.sections[0];
        assert_eq!(s.category, SectionCategory::Step);
        assert_eq!(s.title, "1.Check Pull Task Execution From the Cluster.");
        assert_eq!(s.prerequisite.as_deref(), Some("The region and cluster name are given."));
        assert_eq!(s.header.as_deref(), Some("Check Pull Task Execution From the Cluster."));
        assert!(s.body.as_deref().unwrap().contains("```kusto"));
        assert_eq!(s.linker.as_deref().unwrap().matches("[MITIGATE]").count(), 3);
    }

    #[test]
    fn prose_only_is_unstructured() {
        let err = parse_structured_doc("Just a paragraph.\n\nAnother one.", meta()).unwrap_err();
        assert!(matches!(err, PipelineError::Unstructured));
        let original = include_str!("../../fixtures/icm/original.md");
        assert!(matches!(parse_structured_doc(original, meta()), Err(PipelineError::Unstructured)));
    }

    #[test]
    fn two_steps_in_document_order() {
        let md = "## First\n### Header\nA\n### Body\nDo a.\n### Linker\n- If x, then B.[CONTINUE]\n\
                  ## Second\n### Header\nB\n### Body\nDo b.\n### Linker\n- If y, then done.[MITIGATE]\n";
        let doc = parse_structured_doc(md, meta()).unwrap();
        let headers: Vec<_> = doc.sections.iter().map(|s| s.header.as_deref().unwrap()).collect();
        assert_eq!(headers, ["A", "B"]);
        assert!(doc.sections.iter().all(|s| s.category == SectionCategory::Step));
    }

    #[test]
    fn category_detection() {
        let md = "## FAQ: How do I get access?\nAsk the owner.\n\
                  ## Glossary\n### Header\nSLO\n### Body\nService level objective.\n\
                  ## Terminology - ICM\n### Body\nIncident manager.\n";
        let doc = parse_structured_doc(md, meta()).unwrap();
        let cats: Vec<_> = doc.sections.iter().map(|s| s.category).collect();
        assert_eq!(cats, [SectionCategory::Faq, SectionCategory::Appendix, SectionCategory::Terminology]);
        assert_eq!(doc.sections[0].body.as_deref(), Some("Ask the owner."));
        assert_eq!(doc.sections[2].title, "ICM");
    }

    #[test]
    fn unknown_headings_and_fenced_hashes_go_to_body() {
        let md = "## STEP: s\n### Header\nH\n### Body\nRun:\n```\n## not a heading\n### Linker\n```\n### Notes\nextra\n### Linker\n- If a, then b.[MITIGATE]\n";
        let doc = parse_structured_doc(md, meta()).unwrap();
        let s = &doc.sections[0];
        assert!(s.body.as_deref().unwrap().contains("## not a heading"));
        assert!(s.body.as_deref().unwrap().ends_with("### Notes\nextra"));
        assert_eq!(s.linker.as_deref(), Some("- If a, then b.[MITIGATE]"));
    }

    #[test]
    fn step_without_header_is_rejected() {
        let md = "## STEP: x\n### Body\nDo.\n";
        assert!(matches!(
            parse_structured_doc(md, meta()),
            Err(PipelineError::IncompleteStep { section: 0, missing: "Header" })
        ));
    }

    #[test]
    fn parse_is_stable_under_render() {
        let doc = parse_structured_doc(REFORMULATED, meta()).unwrap();
        assert_eq!(parse_structured_doc(&render_structured_doc(&doc), meta()).unwrap(), doc);
    }

    #[test]
    fn refinement_fills_missing_blocks() {
        let mut draft_section = Section::new(SectionCategory::Step, "Check");
        draft_section.header = Some("Check the server load".into());
        draft_section.body = Some("Open the monitor.".into());
        draft_section.prerequisite = Some("Monitor access.".into());
        let mut refined_section = draft_section.clone();
        refined_section.prerequisite = None;
        refined_section.linker = Some("- If high, then Optimize.[CONTINUE]".into());
        let extra = Section::new(SectionCategory::Faq, "Extra");
        let draft = StructuredDoc { meta: meta(), title: None, sections: vec![draft_section, extra.clone()] };
        let refined = StructuredDoc { meta: meta(), title: None, sections: vec![refined_section] };
        let merged = merge_refinement(&draft, &refined);
        assert_eq!(merged.sections.len(), 2);
        assert_eq!(merged.sections[0].prerequisite.as_deref(), Some("Monitor access."));
        assert!(merged.sections[0].linker.is_some());
        assert_eq!(merged.sections[1], extra);
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-z]{1,8}", 1..8).prop_map(|w| w.join(" "))
    }

    fn section_strategy() -> impl Strategy<Value = Section> {
        (
            prop_oneof![
                Just(SectionCategory::Step),
                Just(SectionCategory::Faq),
                Just(SectionCategory::Terminology),
                Just(SectionCategory::Appendix)
            ],
            text_strategy(),
            prop::option::of(text_strategy()),
            text_strategy(),
            text_strategy(),
            prop::option::of(text_strategy()),
        )
            .prop_map(|(category, title, prerequisite, header, body, linker)| Section {
                category,
                title,
                prerequisite,
                header: Some(header),
                body: Some(body),
                linker,
            })
    }

    proptest! {
        #[test]
        fn parse_render_identity(
            title in prop::option::of(text_strategy()),
            sections in prop::collection::vec(section_strategy(), 1..6),
        ) {
            let doc = StructuredDoc { meta: meta(), title, sections };
            let back = parse_structured_doc(&render_structured_doc(&doc), meta()).unwrap();
            prop_assert_eq!(back, doc);
        }
    }
}
