use std::collections::BTreeMap;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::middleware::Next;
use axum::response::Response;
use axum::Json;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use threadkb::kb::{kb_stats, Neighbor, Scope};
use threadkb::lu::{LogicUnit, SourceDocument};
use threadkb::pipeline::Manifest;
use threadkb::session::{Mode, SessionStatus, TranscriptTurn, TurnResponse};
use threadkb::text::WordPunctCounter;
use threadkb::KnowledgeBase;

use crate::error::ApiError;
use crate::journal::JournalEntry;
use crate::{random_hex128, ApiSession, AppState};

const MAX_K: usize = 100;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

fn bearer(req: &Request) -> Option<&str> {
    req.headers().get(AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

pub async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(expected) = &state.0.config.token {
        if bearer(&req) != Some(expected.as_str()) {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(req).await)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(format!("worker failed: {e}")))
}

pub async fn spec() -> Json<Value> {
    Json(crate::openapi())
}

pub async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "kb_loaded": state.kb().is_some(),
        "sessions": state.session_count(),
    }))
}

#[derive(Deserialize)]
struct IngestRequest {
    manifest: Value,
    /// Manifest path to file contents.
    #[serde(default)]
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct IngestedDoc {
    doc_id: String,
    lu_count: usize,
    lu_ids: Vec<String>,
    warnings: Vec<String>,
}

fn manifest_documents(req: IngestRequest) -> Result<Vec<SourceDocument>, ApiError> {
    let manifest = Manifest::from_json(&req.manifest.to_string()).map_err(ApiError::from)?;
    if manifest.documents.is_empty() {
        return Err(ApiError::BadRequest("manifest lists no documents".into()));
    }
    manifest
        .documents
        .into_iter()
        .map(|e| {
            let key = e.path.to_string_lossy().into_owned();
            let raw_text = req
                .files
                .get(&key)
                .ok_or_else(|| ApiError::BadRequest(format!("manifest entry {} references missing file {key:?}", e.id)))?;
            if raw_text.trim().is_empty() {
                return Err(ApiError::BadRequest(format!("file {key:?} is empty")));
            }
            Ok(SourceDocument { id: e.id, title: e.title, raw_text: raw_text.clone(), format_tag: e.format_tag, date: e.date })
        })
        .collect()
}

/// Runs the pipeline over the posted documents and publishes the result as
/// one snapshot; on any failure the current snapshot stays in place.
pub async fn ingest(State(state): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let docs = manifest_documents(parse(&body)?)?;
    let _guard = state.0.ingest.lock().await;
    let current = state.kb();
    let st = state.clone();
    let (kb, reports) = blocking(move || -> Result<_, ApiError> {
        let pipeline = &st.0.pipeline;
        let emb = Some(st.0.embedder.as_ref());
        let mut kb: Option<KnowledgeBase> = None;
        let mut reports = Vec::with_capacity(docs.len());
        for doc in &docs {
            let (lus, report) = pipeline.process(doc)?;
            let base = kb.as_ref().or(current.as_deref());
            let next = match base {
                Some(b) => b.replace_doc(&doc.id, lus, emb),
                None => KnowledgeBase::build(lus, emb),
            }
            .map_err(|e| ApiError::Unprocessable(format!("document {}: {e}", doc.id)))?;
            kb = Some(next);
            reports.push(report);
        }
        Ok((kb.expect("at least one document"), reports))
    })
    .await??;
    if let Some(path) = &state.0.config.kb_path {
        if let Err(e) = threadkb::kb::persist(&kb, path) {
            log::warn!("could not persist knowledge base to {}: {e}", path.display());
        }
    }
    let total = kb.len();
    state.set_kb(kb);
    let documents: Vec<IngestedDoc> = reports
        .into_iter()
        .map(|r| IngestedDoc { doc_id: r.doc_id.clone(), lu_count: r.lu_count(), lu_ids: r.lu_ids, warnings: r.warnings })
        .collect();
    Ok(Json(json!({ "documents": documents, "total_lus": total })))
}

pub async fn kb_info(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let kb = state.kb().ok_or_else(ApiError::no_kb)?;
    Ok(Json(json!({
        "info": kb.info(),
        "docs": kb.doc_ids(),
        "stats": kb_stats(&kb, &WordPunctCounter),
    })))
}

#[derive(Serialize)]
pub struct SessionReply {
    pub session_id: String,
    /// Echo this in the next feedback call; absent once the session ends.
    pub turn_nonce: Option<String>,
    #[serde(flatten)]
    pub response: TurnResponse,
}

#[derive(Deserialize)]
struct CreateSession {
    question: String,
    #[serde(default)]
    mode: Option<Mode>,
}

fn owner_of(headers: &axum::http::HeaderMap) -> Option<String> {
    headers
        .get(AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
}

fn journal_entries(s: &ApiSession, from: usize) -> Vec<JournalEntry> {
    s.state.transcript()[from..]
        .iter()
        .map(|t| JournalEntry { session_id: s.id.clone(), mode: s.mode, turn: t.clone() })
        .collect()
}

pub async fn create_session(
    State(state): State<AppState>,
    headers: axum::http::HeaderMap,
    body: Bytes,
) -> Result<Json<SessionReply>, ApiError> {
    let req: CreateSession = parse(&body)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::BadRequest("empty question".into()));
    }
    let kb = state.kb().ok_or_else(ApiError::no_kb)?;
    let mode = req.mode.unwrap_or(state.0.config.session.mode);
    let engine = state.engine(kb, mode);
    let id = random_hex128();
    let (eng, sid) = (engine.clone(), id.clone());
    let (sess_state, resp) = blocking(move || eng.start(sid, &req.question)).await??;
    let nonce = (!resp.status.is_terminal()).then(random_hex128);
    let s = ApiSession {
        id: id.clone(),
        owner: owner_of(&headers),
        mode,
        engine,
        state: sess_state,
        created: SystemTime::now(),
        expires: Instant::now() + state.0.config.session_ttl,
        nonce: nonce.clone(),
        last: resp.clone(),
    };
    state.journal(&journal_entries(&s, 0));
    state.insert_session(s);
    Ok(Json(SessionReply { session_id: id, turn_nonce: nonce, response: resp }))
}

/// Locks a live session owned by the caller; expired sessions are dropped.
async fn live_session(
    state: &AppState,
    id: &str,
    headers: &axum::http::HeaderMap,
) -> Result<tokio::sync::OwnedMutexGuard<ApiSession>, ApiError> {
    let slot = state.session(id).ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))?;
    let guard = slot.lock_owned().await;
    if guard.owner.is_some() && guard.owner != owner_of(headers) {
        return Err(ApiError::NotFound(format!("unknown session {id}")));
    }
    if guard.expires <= Instant::now() {
        drop(guard);
        state.remove_session(id);
        return Err(ApiError::Gone(format!("session {id} expired")));
    }
    Ok(guard)
}

#[derive(Serialize)]
struct SessionView<'a> {
    session_id: &'a str,
    mode: Mode,
    status: SessionStatus,
    turn_count: u32,
    current: Option<&'a str>,
    presented: &'a [String],
    turn_nonce: Option<&'a str>,
    created_at: u64,
    expires_in_secs: u64,
    last_response: &'a TurnResponse,
    transcript: &'a [TranscriptTurn],
}

pub async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: axum::http::HeaderMap,
) -> Result<Json<Value>, ApiError> {
    let s = live_session(&state, &id, &headers).await?;
    let view = SessionView {
        session_id: &s.id,
        mode: s.mode,
        status: s.state.status,
        turn_count: s.state.turn_count,
        current: s.state.current.as_deref(),
        presented: &s.state.presented,
        turn_nonce: s.nonce.as_deref(),
        created_at: s.created.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        expires_in_secs: s.expires.saturating_duration_since(Instant::now()).as_secs(),
        last_response: &s.last,
        transcript: s.state.transcript(),
    };
    Ok(Json(serde_json::to_value(view).map_err(|e| ApiError::Internal(e.to_string()))?))
}

#[derive(Deserialize)]
struct FeedbackRequest {
    #[serde(default)]
    outcome: Option<String>,
    #[serde(default)]
    clarification: Option<String>,
    #[serde(default, alias = "nonce")]
    turn_nonce: Option<String>,
}

enum Input {
    Outcome(String),
    Clarification(String),
}

pub async fn feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: axum::http::HeaderMap,
    body: Bytes,
) -> Result<Json<SessionReply>, ApiError> {
    let req: FeedbackRequest = parse(&body)?;
    let mut s = live_session(&state, &id, &headers).await?;
    if s.state.status.is_terminal() {
        return Err(ApiError::Gone(format!("session {id} is {}", s.state.status)));
    }
    let nonempty = |v: Option<String>| v.filter(|t| !t.trim().is_empty());
    let input = match (nonempty(req.outcome), nonempty(req.clarification)) {
        (Some(o), None) => Input::Outcome(o),
        (None, Some(c)) => Input::Clarification(c),
        (None, None) => return Err(ApiError::BadRequest("empty payload: send outcome or clarification".into())),
        (Some(_), Some(_)) => return Err(ApiError::BadRequest("send either outcome or clarification, not both".into())),
    };
    let nonce = req.turn_nonce.ok_or_else(|| ApiError::BadRequest("missing turn_nonce".into()))?;
    if s.nonce.as_deref() != Some(nonce.as_str()) {
        return Err(ApiError::Conflict("stale or replayed turn_nonce".into()));
    }
    let before = s.state.transcript().len();
    let (s, resp) = blocking(move || {
        let ApiSession { engine, state: st, .. } = &mut *s;
        let r = match input {
            Input::Outcome(o) => engine.submit_feedback(st, &o),
            Input::Clarification(c) => engine.answer_clarification(st, &c),
        };
        (s, r)
    })
    .await?;
    let mut s = s;
    let resp = resp?;
    s.nonce = (!resp.status.is_terminal()).then(random_hex128);
    s.expires = Instant::now() + state.0.config.session_ttl;
    s.last = resp.clone();
    state.journal(&journal_entries(&s, before));
    Ok(Json(SessionReply { session_id: s.id.clone(), turn_nonce: s.nonce.clone(), response: resp }))
}

#[derive(Deserialize)]
pub struct LuQuery {
    query: Option<String>,
    k: Option<String>,
}

#[derive(Serialize)]
struct LuHit {
    lu_id: String,
    score: f64,
    header: String,
    lu_type: String,
    source_doc_id: String,
}

pub async fn search_lus(State(state): State<AppState>, Query(q): Query<LuQuery>) -> Result<Json<Value>, ApiError> {
    let kb = state.kb().ok_or_else(ApiError::no_kb)?;
    let query = q.query.filter(|t| !t.trim().is_empty()).ok_or_else(|| ApiError::BadRequest("query is required".into()))?;
    let k = match q.k.as_deref() {
        None | Some("") => 5,
        Some(raw) => raw
            .parse::<usize>()
            .ok()
            .filter(|k| (1..=MAX_K).contains(k))
            .ok_or_else(|| ApiError::BadRequest(format!("k must be an integer in 1..={MAX_K}")))?,
    };
    let emb = state.0.embedder.clone();
    let (kb2, q2) = (kb.clone(), query.clone());
    let hits = blocking(move || kb2.retrieve(&q2, k, Some(emb.as_ref()), &Scope::all()))
        .await?
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let results: Vec<LuHit> = hits
        .into_iter()
        .map(|h| {
            let u = &kb.units()[h.index];
            LuHit {
                lu_id: h.lu_id,
                score: h.score,
                header: u.header.clone(),
                lu_type: u.lu_type.as_str().to_string(),
                source_doc_id: u.meta.source_doc_id.clone(),
            }
        })
        .collect();
    Ok(Json(json!({ "query": query, "k": k, "results": results })))
}

#[derive(Serialize)]
struct LuDetail<'a> {
    lu: &'a LogicUnit,
    neighbors: Vec<Neighbor>,
}

pub async fn get_lu(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let kb = state.kb().ok_or_else(ApiError::no_kb)?;
    if kb.get(&id).is_none() {
        return Err(ApiError::NotFound(format!("unknown logic unit {id}")));
    }
    let emb = state.0.embedder.clone();
    let floor = state.0.config.session.score_floor;
    let (kb2, id2) = (kb.clone(), id.clone());
    let neighbors = blocking(move || kb2.neighbors(&id2, Some(emb.as_ref()), floor))
        .await?
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let lu = kb.get(&id).expect("checked above");
    Ok(Json(serde_json::to_value(LuDetail { lu, neighbors }).map_err(|e| ApiError::Internal(e.to_string()))?))
}
