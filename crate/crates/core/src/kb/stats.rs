use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::KnowledgeBase;
use crate::lu::LinkerToken;
use crate::scalar::Scalar;
use crate::text::TokenCounter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbStats {
    pub lu_count: usize,
    pub doc_count: usize,
    pub type_histogram: BTreeMap<String, usize>,
    pub token_histogram: BTreeMap<String, usize>,
    pub mean_header_tokens: f64,
    pub mean_body_tokens: f64,
    pub embedder_id: Option<String>,
    pub dim: usize,
}

pub fn kb_stats<S: Scalar>(kb: &KnowledgeBase<S>, counter: &dyn TokenCounter) -> KbStats {
    let mut type_histogram = BTreeMap::new();
    let mut token_histogram: BTreeMap<String, usize> =
        LinkerToken::ALL.iter().map(|t| (t.as_str().to_string(), 0)).collect();
    let (mut h, mut b) = (0usize, 0usize);
    for u in kb.units() {
        *type_histogram.entry(u.lu_type.as_str().to_string()).or_insert(0) += 1;
        for br in &u.linker {
            if let Some(t) = br.token.known() {
                *token_histogram.entry(t.as_str().to_string()).or_insert(0) += 1;
            }
        }
        h += counter.count(&u.header);
        b += counter.count(&u.body);
    }
    let n = kb.len();
    let mean = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    KbStats {
        lu_count: n,
        doc_count: kb.doc_ids().len(),
        type_histogram,
        token_histogram,
        mean_header_tokens: mean(h),
        mean_body_tokens: mean(b),
        embedder_id: kb.info().embedder_id.clone(),
        dim: kb.info().dim,
    }
}
