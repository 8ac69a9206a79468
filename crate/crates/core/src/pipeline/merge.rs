//! Collapsing near-duplicate units and single-successor chains.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::gateway::{Embedder, Embedding};
use crate::lu::{LinkerBranch, LinkerToken, LogicUnit, LuType};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergePolicy {
    pub header_sim_threshold: f64,
    pub body_sim_threshold: f64,
    pub chain_merge_enabled: bool,
    /// Minimum lead of the best header match over the runner-up for a
    /// next intent to resolve to a single unit.
    pub resolve_margin: f64,
    /// Pair-merge units from different source documents.
    pub cross_document: bool,
}

impl Default for MergePolicy {
    fn default() -> Self {
        Self {
            header_sim_threshold: 0.85,
            body_sim_threshold: 0.80,
            chain_merge_enabled: true,
            resolve_margin: 0.05,
            cross_document: false,
        }
    }
}

impl MergePolicy {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [("header", self.header_sim_threshold), ("body", self.body_sim_threshold)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(PipelineError::Config(format!("{name} similarity threshold {v} outside (0, 1]")));
            }
        }
        if self.resolve_margin.is_nan() || self.resolve_margin < 0.0 {
            return Err(PipelineError::Config(format!("resolve margin {} < 0", self.resolve_margin)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergeOutcome {
    pub lus: Vec<LogicUnit>,
    pub warnings: Vec<String>,
    pub pair_merges: usize,
    pub chain_merges: usize,
}

/// Embeds each distinct text once.
struct EmbedCache<'a, S: Scalar> {
    embedder: &'a dyn Embedder<S>,
    cache: HashMap<String, Embedding<S>>,
}

impl<'a, S: Scalar> EmbedCache<'a, S> {
    fn new(embedder: &'a dyn Embedder<S>) -> Self {
        Self { embedder, cache: HashMap::new() }
    }

    fn prefetch(&mut self, texts: &[&str]) -> Result<(), PipelineError> {
        let mut missing: Vec<&str> = texts.iter().copied().filter(|t| !self.cache.contains_key(*t)).collect();
        missing.sort_unstable();
        missing.dedup();
        let embeddable: Vec<&str> = missing.iter().copied().filter(|t| !t.trim().is_empty()).collect();
        if !embeddable.is_empty() {
            let vecs = self.embedder.embed(&embeddable)?;
            for (t, v) in embeddable.iter().zip(vecs) {
                self.cache.insert(t.to_string(), v);
            }
        }
        Ok(())
    }

    fn sim(&self, a: &str, b: &str) -> f64 {
        match (self.cache.get(a), self.cache.get(b)) {
            (Some(x), Some(y)) => x.dot(y).to_f64_lossy(),
            _ => 0.0,
        }
    }
}

/// Index of the unit whose header uniquely matches `intent`: best score at
/// least `threshold` and ahead of the runner-up by `margin`.
pub fn resolve_unique(scores: &[(usize, f64)], threshold: f64, margin: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::NEG_INFINITY;
    for &(i, s) in scores {
        match best {
            Some((_, b)) if s > b => {
                second = b;
                best = Some((i, s));
            }
            Some(_) => second = second.max(s),
            None => best = Some((i, s)),
        }
    }
    let (i, b) = best?;
    (b >= threshold && b - second >= margin).then_some(i)
}

fn branch_key(b: &LinkerBranch) -> (String, String, Option<LinkerToken>) {
    (b.condition.clone(), b.next_intent.clone(), b.token.known())
}

fn absorb(into: &mut LogicUnit, other: &LogicUnit) {
    for b in &other.linker {
        if !into.linker.iter().any(|x| branch_key(x) == branch_key(b)) {
            into.linker.push(b.clone());
        }
    }
    let p = other.prerequisite.trim();
    if !p.is_empty() && !into.prerequisite.contains(p) {
        if into.prerequisite.trim().is_empty() {
            into.prerequisite = p.to_string();
        } else {
            into.prerequisite = format!("{} {}", into.prerequisite.trim_end(), p);
        }
    }
    for (k, v) in &other.default_parameters {
        into.default_parameters.entry(k.clone()).or_insert_with(|| v.clone());
    }
}

/// Pair-merge, then chain-merge to a fixpoint. Output order follows the
/// first occurrence of each surviving unit.
pub fn merge_lus<S: Scalar>(
    lus: Vec<LogicUnit>,
    policy: &MergePolicy,
    embedder: &dyn Embedder<S>,
) -> Result<MergeOutcome, PipelineError> {
    policy.validate()?;
    let mut cache = EmbedCache::new(embedder);
    let mut out = MergeOutcome::default();

    // Exact duplicates (same id and content) are dropped; same id with
    // different content is left to the pair rule or reported.
    let mut units: Vec<LogicUnit> = Vec::with_capacity(lus.len());
    for lu in lus {
        if units.contains(&lu) {
            continue;
        }
        units.push(lu);
    }

    let texts: Vec<&str> = units.iter().flat_map(|u| [u.header.as_str(), u.body.as_str()]).collect();
    let texts: Vec<String> = texts.into_iter().map(str::to_string).collect();
    cache.prefetch(&texts.iter().map(String::as_str).collect::<Vec<_>>())?;

    let mut absorbed = vec![false; units.len()];
    let mut merged: Vec<LogicUnit> = Vec::with_capacity(units.len());
    for i in 0..units.len() {
        if absorbed[i] {
            continue;
        }
        let mut head = units[i].clone();
        if head.lu_type == LuType::Step {
            for j in i + 1..units.len() {
                let other = &units[j];
                if absorbed[j]
                    || other.lu_type != LuType::Step
                    || (!policy.cross_document && other.meta.source_doc_id != head.meta.source_doc_id)
                {
                    continue;
                }
                let hs = cache.sim(&units[i].header, &other.header);
                let bs = cache.sim(&units[i].body, &other.body);
                if hs >= policy.header_sim_threshold && bs >= policy.body_sim_threshold {
                    absorb(&mut head, other);
                    absorbed[j] = true;
                    out.pair_merges += 1;
                }
            }
        }
        merged.push(head);
    }

    if policy.chain_merge_enabled {
        merged = chain_merge(merged, policy, &mut cache, &mut out)?;
    }

    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, u) in merged.iter().enumerate() {
        if let Some(prev) = seen.insert(u.id.clone(), i) {
            out.warnings.push(format!("units {prev} and {i} share id {}", u.id));
        }
    }
    out.lus = merged;
    Ok(out)
}

/// Successor edges: (from, to) for each CONTINUE/CROSS branch whose query
/// resolves uniquely.
fn successor_edges<S: Scalar>(
    units: &[LogicUnit],
    policy: &MergePolicy,
    cache: &mut EmbedCache<'_, S>,
) -> Result<Vec<Vec<Option<usize>>>, PipelineError> {
    let mut texts: Vec<&str> = units.iter().map(|u| u.header.as_str()).collect();
    for u in units {
        texts.extend(u.linker.iter().map(|b| b.query()));
    }
    cache.prefetch(&texts)?;
    let mut edges = Vec::with_capacity(units.len());
    for (a, u) in units.iter().enumerate() {
        let mut row = Vec::with_capacity(u.linker.len());
        for b in &u.linker {
            let token = b.token.known();
            if token == Some(LinkerToken::Mitigate) {
                row.push(None);
                continue;
            }
            let cross = token == Some(LinkerToken::Cross);
            let scores: Vec<(usize, f64)> = units
                .iter()
                .enumerate()
                .filter(|(j, v)| *j != a && (cross || v.meta.source_doc_id == u.meta.source_doc_id))
                .map(|(j, v)| (j, cache.sim(b.query(), &v.header)))
                .collect();
            row.push(resolve_unique(&scores, policy.header_sim_threshold, policy.resolve_margin));
        }
        edges.push(row);
    }
    Ok(edges)
}

fn chain_merge<S: Scalar>(
    mut units: Vec<LogicUnit>,
    policy: &MergePolicy,
    cache: &mut EmbedCache<'_, S>,
    out: &mut MergeOutcome,
) -> Result<Vec<LogicUnit>, PipelineError> {
    let mut reported_cycles: Vec<Vec<String>> = Vec::new();
    loop {
        let edges = successor_edges(&units, policy, cache)?;
        let mut incoming = vec![0usize; units.len()];
        for row in &edges {
            for t in row.iter().flatten() {
                incoming[*t] += 1;
            }
        }
        // Chain candidates: A with a single CONTINUE branch to a Step B that
        // has no other predecessor.
        let next: Vec<Option<usize>> = units
            .iter()
            .enumerate()
            .map(|(a, u)| {
                let single = u.lu_type == LuType::Step
                    && u.linker.len() == 1
                    && u.linker[0].token.known() == Some(LinkerToken::Continue);
                let b = edges[a].first().copied().flatten()?;
                (single && units[b].lu_type == LuType::Step && incoming[b] == 1).then_some(b)
            })
            .collect();

        let mut in_cycle = vec![false; units.len()];
        for start in 0..units.len() {
            let mut path = vec![start];
            let mut cur = start;
            while let Some(n) = next[cur] {
                if n == start {
                    for &p in &path {
                        in_cycle[p] = true;
                    }
                    let mut ids: Vec<String> = path.iter().map(|&p| units[p].id.clone()).collect();
                    ids.sort();
                    if !reported_cycles.contains(&ids) {
                        out.warnings.push(format!("chain-merge cycle left unmerged: {}", ids.join(" -> ")));
                        reported_cycles.push(ids);
                    }
                    break;
                }
                if path.contains(&n) || path.len() > units.len() {
                    break;
                }
                path.push(n);
                cur = n;
            }
        }

        let pick = (0..units.len()).find_map(|a| {
            let b = next[a]?;
            if in_cycle[a] || in_cycle[b] {
                return None;
            }
            let clash = units[b]
                .default_parameters
                .iter()
                .any(|(k, v)| units[a].default_parameters.get(k).is_some_and(|w| w != v));
            if clash {
                return None;
            }
            Some((a, b))
        });
        let Some((a, b)) = pick else { break };

        let tail = units[b].clone();
        let head = &mut units[a];
        head.body = format!("{}\n\n{}", head.body.trim_end(), tail.body.trim_start());
        head.linker = tail.linker.clone();
        for (k, v) in tail.default_parameters {
            head.default_parameters.entry(k).or_insert(v);
        }
        head.assign_id();
        units.remove(b);
        out.chain_merges += 1;
    }
    Ok(units)
}
