use std::fmt;

use serde::Serialize;

use super::linker::{parse_linker_lenient, render_branch};
use super::{BranchToken, LogicUnit, LuType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    MissingHeader,
    MissingBody,
    MissingSourceDocId,
    EmptyCondition,
    EmptyNextIntent,
    UnknownLinkerToken,
    MissingLinkerToken,
    UnrenderableBranch,
    UnboundPlaceholder,
    TerminalStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, kind: IssueKind, message: impl Into<String>) {
        self.errors.push(ValidationIssue { kind, message: message.into() });
    }

    fn warn(&mut self, kind: IssueKind, message: impl Into<String>) {
        self.warnings.push(ValidationIssue { kind, message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<&str> = self.errors.iter().map(|e| e.message.as_str()).collect();
        f.write_str(&msgs.join("; "))
    }
}

/// Checks the structural invariants of a logic unit.
pub fn validate_lu(lu: &LogicUnit) -> ValidationReport {
    let mut r = ValidationReport::default();
    if lu.header.trim().is_empty() {
        r.error(IssueKind::MissingHeader, "missing header");
    }
    if lu.body.trim().is_empty() {
        r.error(IssueKind::MissingBody, "missing body");
    }
    if lu.meta.source_doc_id.trim().is_empty() {
        r.error(IssueKind::MissingSourceDocId, "missing source document id");
    }
    for (i, b) in lu.linker.iter().enumerate() {
        if b.condition.trim().is_empty() {
            r.error(IssueKind::EmptyCondition, format!("branch {i}: empty condition"));
        }
        if b.next_intent.trim().is_empty() {
            r.error(IssueKind::EmptyNextIntent, format!("branch {i}: empty next intent"));
        }
        match &b.token {
            BranchToken::Unrecognized(raw) => {
                r.error(IssueKind::UnknownLinkerToken, format!("unknown linker token [{raw}] on branch {i}"))
            }
            BranchToken::Absent if lu.lu_type == LuType::Step => {
                r.error(IssueKind::MissingLinkerToken, format!("missing linker token on branch {i}"))
            }
            _ => {}
        }
        if !b.condition.trim().is_empty() && !b.next_intent.trim().is_empty() {
            let rendered = render_branch(b);
            let reparsed = parse_linker_lenient(&rendered);
            if !matches!(reparsed.as_deref(), Ok([one]) if one == b) {
                r.error(IssueKind::UnrenderableBranch, format!("branch {i} does not survive sentence rendering"));
            }
        }
    }
    for p in lu.placeholders() {
        if !lu.default_parameters.contains_key(&p) {
            r.warn(IssueKind::UnboundPlaceholder, format!("unbound placeholder {p}"));
        }
    }
    if lu.lu_type == LuType::Step && lu.linker.is_empty() {
        r.warn(IssueKind::TerminalStep, "terminal step");
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lu::{LinkerBranch, LinkerToken, MetaData};

    fn step() -> LogicUnit {
        let meta = MetaData { source_doc_id: "doc".into(), title: "t".into(), ..Default::default() };
        let mut lu = LogicUnit::new(LuType::Step, meta, "Check the server load", "Open the monitor.");
        lu.linker.push(LinkerBranch::new("the load is high", "Optimize the database indexes", LinkerToken::Continue));
        lu
    }

    #[test]
    fn valid_step_has_no_errors() {
        let r = validate_lu(&step());
        assert!(r.is_valid(), "{r:?}");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn empty_header_is_one_error() {
        let mut lu = step();
        lu.header = "  ".into();
        let r = validate_lu(&lu);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].message, "missing header");
    }

    #[test]
    fn foo_token_is_one_error() {
        let mut lu = step();
        lu.linker[0].token = BranchToken::Unrecognized("FOO".into());
        let r = validate_lu(&lu);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].kind, IssueKind::UnknownLinkerToken);
        assert!(r.errors[0].message.contains("unknown linker token"));
    }

    #[test]
    fn tokenless_branch_only_fails_on_steps() {
        let mut lu = step();
        lu.linker[0].token = BranchToken::Absent;
        assert_eq!(validate_lu(&lu).errors[0].kind, IssueKind::MissingLinkerToken);
        lu.lu_type = LuType::Faq;
        assert!(validate_lu(&lu).is_valid());
    }

    #[test]
    fn unbound_placeholder_is_a_warning() {
        let mut lu = step();
        lu.body = "Run:\n```\nT | where Cluster == \"<CLUSTER NAME>\" and t > ago(<TIME>)\n```\n".into();
        lu.default_parameters.insert("<TIME>".into(), "8h".into());
        let r = validate_lu(&lu);
        assert!(r.is_valid());
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].message, "unbound placeholder <CLUSTER NAME>");
    }

    #[test]
    fn ambiguous_condition_is_rejected() {
        let mut lu = step();
        lu.linker[0].condition = "a, then b".into();
        assert_eq!(validate_lu(&lu).errors[0].kind, IssueKind::UnrenderableBranch);
    }

    #[test]
    fn empty_linker_step_warns_terminal() {
        let mut lu = step();
        lu.linker.clear();
        let r = validate_lu(&lu);
        assert!(r.is_valid());
        assert_eq!(r.warnings[0].kind, IssueKind::TerminalStep);
    }

    #[test]
    fn validation_is_pure() {
        let lu = step();
        assert_eq!(validate_lu(&lu), validate_lu(&lu));
    }
}
