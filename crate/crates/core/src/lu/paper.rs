//! The `#field#` JSON dialect used in prompts and in the published LU example.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::linker::{parse_linker_lenient, render_linker};
use super::validate::validate_lu;
use super::{FormatTag, LogicUnit, LuError, LuType, MetaData};

#[derive(Debug, Default, Serialize, Deserialize)]
struct PaperMeta {
    #[serde(rename = "#title#", default)]
    title: String,
    #[serde(rename = "#id#", default)]
    id: String,
    #[serde(rename = "#date#", default)]
    date: String,
    #[serde(rename = "#source#", default, skip_serializing_if = "String::is_empty")]
    source: String,
    #[serde(rename = "#format#", default, skip_serializing_if = "String::is_empty")]
    format: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum LinkerField {
    Text(String),
    Lines(Vec<String>),
}

impl Default for LinkerField {
    fn default() -> Self {
        LinkerField::Text(String::new())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PaperLu {
    #[serde(rename = "#type#", default)]
    lu_type: Option<String>,
    #[serde(rename = "#meta data#", default)]
    meta: PaperMeta,
    #[serde(rename = "#prerequisite#", default)]
    prerequisite: String,
    #[serde(rename = "#header#", default)]
    header: Option<String>,
    #[serde(rename = "#body#", default)]
    body: Option<String>,
    #[serde(rename = "#linker#", default)]
    linker: LinkerField,
    #[serde(rename = "#default_parameters#", default)]
    default_parameters: BTreeMap<String, String>,
}

fn to_paper(lu: &LogicUnit) -> PaperLu {
    PaperLu {
        lu_type: Some(lu.lu_type.as_str().to_ascii_lowercase()),
        meta: PaperMeta {
            title: lu.meta.title.clone(),
            id: lu.id.clone(),
            date: lu.meta.date.clone(),
            source: lu.meta.source_doc_id.clone(),
            format: match lu.meta.format_tag {
                FormatTag::Unknown => String::new(),
                t => t.as_str().to_string(),
            },
        },
        prerequisite: lu.prerequisite.clone(),
        header: Some(lu.header.clone()),
        body: Some(lu.body.clone()),
        linker: LinkerField::Text(render_linker(&lu.linker)),
        default_parameters: lu.default_parameters.clone(),
    }
}

/// One compact JSON object keyed by `#type#`, `#meta data#`, `#prerequisite#`,
/// `#header#`, `#body#`, `#linker#` and `#default_parameters#`.
pub fn export_paper_json(lu: &LogicUnit) -> String {
    serde_json::to_string(&to_paper(lu)).expect("paper LU serializes")
}

pub fn export_paper_json_pretty(lu: &LogicUnit) -> String {
    serde_json::to_string_pretty(&to_paper(lu)).expect("paper LU serializes")
}

/// Parses a `#field#` object. An empty `#id#` gets the content-hash id; a
/// missing source id falls back to a slug of the title.
pub fn import_paper_json(text: &str) -> Result<LogicUnit, LuError> {
    let raw: PaperLu = serde_json::from_str(text)?;
    let header = raw.header.ok_or(LuError::MissingField("#header#"))?;
    let body = raw.body.ok_or(LuError::MissingField("#body#"))?;
    let lu_type: LuType = raw.lu_type.ok_or(LuError::MissingField("#type#"))?.parse()?;
    let linker_text = match raw.linker {
        LinkerField::Text(t) => t,
        LinkerField::Lines(lines) => lines.join("\n"),
    };
    let linker = parse_linker_lenient(&linker_text)?;
    let source_doc_id = if raw.meta.source.is_empty() { slug(&raw.meta.title) } else { raw.meta.source };
    let format_tag = raw.meta.format.parse().map_err(LuError::Interchange)?;
    let mut lu = LogicUnit {
        id: raw.meta.id,
        lu_type,
        meta: MetaData { source_doc_id, title: raw.meta.title, date: raw.meta.date, format_tag },
        prerequisite: raw.prerequisite,
        header,
        body,
        linker,
        default_parameters: raw.default_parameters,
    };
    if lu.id.is_empty() {
        lu.assign_id();
    }
    let report = validate_lu(&lu);
    if !report.is_valid() {
        return Err(LuError::Invalid(report));
    }
    Ok(lu)
}

pub(crate) fn slug(title: &str) -> String {
    crate::text::tokens(title).join("-")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lu::{BranchToken, LinkerBranch, LinkerToken};

    const REFERENCE_LU: &str = include_str!("../../fixtures/icm/reference_lu.json");

    #[test]
    fn imports_the_published_example() {
        let lu = import_paper_json(REFERENCE_LU).unwrap();
        assert_eq!(lu.lu_type, LuType::Step);
        assert_eq!(lu.header, "Check Pull Task Execution From the Cluster.");
        assert_eq!(lu.linker.len(), 4);
        let tokens: Vec<_> = lu.linker.iter().map(|b| b.token.known().unwrap()).collect();
        use LinkerToken::*;
        assert_eq!(tokens, [Mitigate, Mitigate, Continue, Mitigate]);
        assert!(lu.default_parameters.contains_key("<TIME>"));
        assert!(lu.default_parameters.contains_key("<CLUSTER NAME>"));
        assert_eq!(lu.id, lu.content_id());
    }

    #[test]
    fn export_uses_hash_keys_and_sentence_linker() {
        let lu = import_paper_json(REFERENCE_LU).unwrap();
        let out = export_paper_json(&lu);
        for key in ["#type#", "#meta data#", "#prerequisite#", "#header#", "#body#", "#linker#", "#default_parameters#"] {
            assert!(out.contains(&format!("\"{key}\"")), "{key}");
        }
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let linker = v["#linker#"].as_str().unwrap();
        assert_eq!(linker.matches("[MITIGATE]").count(), 3);
        assert_eq!(linker.matches("[CONTINUE]").count(), 1);
        assert_eq!(v["#type#"], "step");
        assert_eq!(import_paper_json(&out).unwrap(), lu);
    }

    #[test]
    fn empty_linker_exports_empty_string() {
        let meta = MetaData { source_doc_id: "d".into(), title: "t".into(), ..Default::default() };
        let lu = LogicUnit::new(LuType::Faq, meta, "How do I?", "Like this.");
        let v: serde_json::Value = serde_json::from_str(&export_paper_json(&lu)).unwrap();
        assert_eq!(v["#linker#"], "");
    }

    #[test]
    fn empty_object_is_missing_header() {
        let err = import_paper_json("{}").unwrap_err();
        assert_eq!(err.to_string(), "missing #header#");
    }

    #[test]
    fn malformed_and_unknown_type() {
        assert!(matches!(import_paper_json("{not json"), Err(LuError::Json(_))));
        let err = import_paper_json(r##"{"#type#":"recipe","#header#":"h","#body#":"b","#meta data#":{"#title#":"t"}}"##).unwrap_err();
        assert!(matches!(err, LuError::UnknownType(_)));
    }

    #[test]
    fn tokenless_faq_branches_round_trip() {
        let meta = MetaData { source_doc_id: "d".into(), title: "t".into(), ..Default::default() };
        let mut lu = LogicUnit::new(LuType::Faq, meta, "h", "b");
        lu.linker = vec![
            LinkerBranch { condition: "a".into(), next_intent: "b".into(), token: BranchToken::Absent },
            LinkerBranch { condition: "c".into(), next_intent: "d".into(), token: BranchToken::Absent },
        ];
        assert_eq!(import_paper_json(&export_paper_json(&lu)).unwrap(), lu);
    }
}
