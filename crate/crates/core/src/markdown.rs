//! Minimal markdown scanning: fenced code blocks and placeholders.

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

/// A fenced code block located inside a larger text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    /// Byte range of the whole block, fences included.
    pub span: Range<usize>,
    /// Byte range of the block content between the fence lines.
    pub content: Range<usize>,
    pub info: String,
}

fn fence_marker(line: &str) -> Option<(char, usize, &str)> {
    let t = line.trim_start();
    let c = t.chars().next()?;
    if c != '`' && c != '~' {
        return None;
    }
    let n = t.chars().take_while(|&d| d == c).count();
    (n >= 3).then(|| (c, n, t[n..].trim()))
}

/// Lines of `text` with their byte offsets, line terminators included.
pub(crate) fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |l| {
        let start = offset;
        offset += l.len();
        (start, l)
    })
}

/// Locates fenced code blocks. An unclosed fence runs to the end of the text.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut blocks = Vec::new();
    let mut open: Option<(char, usize, usize, usize, String)> = None;
    for (start, line) in lines_with_offsets(text) {
        let end = start + line.len();
        match (&open, fence_marker(line)) {
            (None, Some((c, n, info))) => open = Some((c, n, start, end, info.to_string())),
            (Some((c, n, _, _, _)), Some((d, m, rest))) if *c == d && m >= *n && rest.is_empty() => {
                let (_, _, s, content_start, info) = open.take().unwrap();
                blocks.push(FencedBlock { span: s..end, content: content_start..start, info });
            }
            _ => {}
        }
    }
    if let Some((_, _, s, content_start, info)) = open {
        blocks.push(FencedBlock { span: s..text.len(), content: content_start..text.len(), info });
    }
    blocks
}

/// Whether byte offset `pos` lies inside a fenced block.
pub fn in_fence(blocks: &[FencedBlock], pos: usize) -> bool {
    blocks.iter().any(|b| b.span.contains(&pos))
}

pub fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[A-Z][A-Z0-9_]*(?: [A-Z0-9_]+)*>").unwrap())
}

/// Placeholders such as `<CLUSTER NAME>` found inside fenced code blocks.
pub fn code_placeholders(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    for block in fenced_blocks(text) {
        for m in placeholder_regex().find_iter(&text[block.content.clone()]) {
            if !found.iter().any(|f| f == m.as_str()) {
                found.push(m.as_str().to_string());
            }
        }
    }
    found
}
