//! Prompt templates. Slots are written `{NAME}` and filled by [`fill`].

pub const REFORMULATE: &str = include_str!("../../prompts/reformulate.txt");
pub const REFINE: &str = include_str!("../../prompts/refine.txt");
pub const CODE_TEMPLATE: &str = include_str!("../../prompts/code_template.txt");
pub const SELECT: &str = include_str!("../../prompts/select.txt");
pub const MATCH: &str = include_str!("../../prompts/match.txt");

/// Replaces each `{NAME}` slot; unknown slots are left as they are.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_are_filled() {
        let p = fill(CODE_TEMPLATE, &[("CODE", "T | take 1"), ("EXAMPLE", "")]);
        assert!(p.ends_with("T | take 1\n"));
        assert!(p.contains("\"#DEFAULT_PARAMETERS#\""));
        assert!(REFORMULATE.contains("[CONTINUE]") && REFORMULATE.contains("{TSG}"));
        assert!(SELECT.contains("{LU_LIST}") && SELECT.contains("REPHRASED_QUERY"));
    }
}
