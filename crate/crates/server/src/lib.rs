//! JSON-over-HTTP front end: ingestion, knowledge-base browsing and live
//! sessions, one pinned snapshot per session.

mod api;
mod error;
mod journal;
mod openapi;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime};

use axum::http::{header, HeaderValue, Method};
use axum::middleware;
use axum::routing::{get, post};
use axum::Router;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use threadkb::gateway::{Embedder, GatewayConfig};
use threadkb::pipeline::PipelineConfig;
use threadkb::session::{Mode, SessionConfig, SessionState, TurnResponse};
use threadkb::{Engine, KnowledgeBase, Pipeline, Real};

pub use api::SessionReply;
pub use error::ApiError;
pub use journal::{read_journal, Journal, JournalEntry};
pub use openapi::openapi;

pub const DEFAULT_PORT: u16 = 8787;
pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("invalid {var}: {msg}")]
    Env { var: &'static str, msg: String },
    #[error(transparent)]
    Gateway(#[from] threadkb::GatewayError),
    #[error(transparent)]
    Pipeline(#[from] threadkb::PipelineError),
    #[error(transparent)]
    Kb(#[from] threadkb::KbError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Bearer token required on every `/api/v1` route except the spec.
    pub token: Option<String>,
    pub port: u16,
    /// Idle time after which a session expires.
    pub session_ttl: Duration,
    pub journal: Option<PathBuf>,
    /// Knowledge-base file loaded at startup and rewritten after ingest.
    pub kb_path: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub ui_origin: Option<String>,
    pub gateway: GatewayConfig,
    pub pipeline: PipelineConfig,
    pub session: SessionConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            token: None,
            port: DEFAULT_PORT,
            session_ttl: DEFAULT_TTL,
            journal: None,
            kb_path: None,
            ui_dir: None,
            ui_origin: None,
            gateway: GatewayConfig::default(),
            pipeline: PipelineConfig::new(),
            session: SessionConfig::default(),
        }
    }
}

fn env_path(var: &str) -> Option<PathBuf> {
    std::env::var_os(var).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn env_parse<T: std::str::FromStr>(var: &'static str) -> Result<Option<T>, ServerError>
where
    T::Err: std::fmt::Display,
{
    match std::env::var(var) {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse().map(Some).map_err(|e: T::Err| ServerError::Env { var, msg: e.to_string() })
        }
        _ => Ok(None),
    }
}

impl ServerConfig {
    /// Reads THREADKB_TOKEN, THREADKB_PORT, THREADKB_SESSION_TTL (seconds),
    /// THREADKB_JOURNAL, THREADKB_KB, THREADKB_UI_DIR, THREADKB_UI_ORIGIN,
    /// THREADKB_PROVIDER and THREADKB_SCRIPT.
    pub fn from_env() -> Result<Self, ServerError> {
        let mut cfg = Self { token: std::env::var("THREADKB_TOKEN").ok().filter(|t| !t.is_empty()), ..Self::default() };
        if let Some(p) = env_parse("THREADKB_PORT")? {
            cfg.port = p;
        }
        if let Some(s) = env_parse::<u64>("THREADKB_SESSION_TTL")? {
            cfg.session_ttl = Duration::from_secs(s);
        }
        cfg.journal = env_path("THREADKB_JOURNAL");
        cfg.kb_path = env_path("THREADKB_KB");
        cfg.ui_dir = env_path("THREADKB_UI_DIR");
        cfg.ui_origin = std::env::var("THREADKB_UI_ORIGIN").ok().filter(|o| !o.is_empty());
        if let Some(p) = env_parse("THREADKB_PROVIDER")? {
            cfg.gateway.provider = p;
        }
        cfg.gateway.script = env_path("THREADKB_SCRIPT");
        Ok(cfg)
    }
}

pub(crate) struct ApiSession {
    pub id: String,
    pub owner: Option<String>,
    pub mode: Mode,
    pub engine: Engine,
    pub state: SessionState,
    pub created: SystemTime,
    pub expires: Instant,
    /// Must be echoed by the next feedback call; `None` once terminal.
    pub nonce: Option<String>,
    pub last: TurnResponse,
}

pub(crate) struct Shared {
    pub config: ServerConfig,
    pub pipeline: Pipeline,
    pub embedder: Arc<dyn Embedder<Real>>,
    pub kb: RwLock<Option<Arc<KnowledgeBase>>>,
    pub ingest: tokio::sync::Mutex<()>,
    pub sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<ApiSession>>>>,
    pub journal: Option<Journal>,
}

/// Cheaply cloneable handle on the service state.
#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Shared>);

pub(crate) fn random_hex128() -> String {
    format!("{:032x}", rand::random::<u128>())
}

impl AppState {
    /// Builds the gateway and pipeline, loads the knowledge-base file if one
    /// is configured, and restores journaled sessions.
    pub fn new(config: ServerConfig) -> Result<Self, ServerError> {
        let gateway = config.gateway.build_gateway()?;
        let embedder = config.gateway.build_embedder::<Real>()?;
        let pipeline = Pipeline::new(config.pipeline.clone(), gateway, embedder.clone())?;
        let kb = match &config.kb_path {
            Some(p) if p.exists() => Some(Arc::new(threadkb::kb::load::<Real>(p)?)),
            _ => None,
        };
        let journal = config.journal.as_deref().map(Journal::open).transpose()?;
        let state = AppState(Arc::new(Shared {
            config,
            pipeline,
            embedder,
            kb: RwLock::new(kb),
            ingest: tokio::sync::Mutex::new(()),
            sessions: Mutex::new(HashMap::new()),
            journal,
        }));
        state.restore_sessions()?;
        Ok(state)
    }

    pub fn config(&self) -> &ServerConfig {
        &self.0.config
    }

    pub fn kb(&self) -> Option<Arc<KnowledgeBase>> {
        self.0.kb.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    /// Publishes a new snapshot. Live sessions keep the one they started with.
    pub fn set_kb(&self, kb: KnowledgeBase) {
        *self.0.kb.write().unwrap_or_else(|p| p.into_inner()) = Some(Arc::new(kb));
    }

    pub fn session_count(&self) -> usize {
        self.0.sessions.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub(crate) fn engine(&self, kb: Arc<KnowledgeBase>, mode: Mode) -> Engine {
        let cfg = SessionConfig { mode, ..self.0.config.session.clone() };
        Engine::new(kb, Some(self.0.embedder.clone()), cfg).with_gateway(self.0.pipeline.gateway().clone())
    }

    fn restore_sessions(&self) -> Result<(), ServerError> {
        let (Some(journal), Some(kb)) = (&self.0.journal, self.kb()) else { return Ok(()) };
        let mut restored = 0;
        for (id, mode, turns) in read_journal(journal.path())? {
            let engine = self.engine(kb.clone(), mode);
            match engine.replay(&id, &turns) {
                Ok(state) => {
                    let last = state.transcript().last().map(|t| t.response);
                    let nonce = (!state.status.is_terminal()).then(random_hex128);
                    let resp = TurnResponse {
                        kind: last.unwrap_or(threadkb::session::ResponseKind::NoInfo),
                        status: state.status,
                        text: String::new(),
                        lu_id: state.current.clone(),
                        header: None,
                        branches: Vec::new(),
                        turn: state.turn_count,
                    };
                    let s = ApiSession {
                        id: id.clone(),
                        owner: self.0.config.token.clone(),
                        mode,
                        engine,
                        state,
                        created: SystemTime::now(),
                        expires: Instant::now() + self.0.config.session_ttl,
                        nonce,
                        last: resp,
                    };
                    self.insert_session(s);
                    restored += 1;
                }
                Err(e) => log::warn!("journal session {id} not restored: {e}"),
            }
        }
        if restored > 0 {
            log::info!("restored {restored} sessions from {}", journal.path().display());
        }
        Ok(())
    }

    pub(crate) fn insert_session(&self, s: ApiSession) {
        let id = s.id.clone();
        self.0.sessions.lock().unwrap_or_else(|p| p.into_inner()).insert(id, Arc::new(tokio::sync::Mutex::new(s)));
    }

    pub(crate) fn session(&self, id: &str) -> Option<Arc<tokio::sync::Mutex<ApiSession>>> {
        self.0.sessions.lock().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    pub(crate) fn remove_session(&self, id: &str) {
        self.0.sessions.lock().unwrap_or_else(|p| p.into_inner()).remove(id);
    }

    /// Drops sessions idle past their TTL. Returns how many were removed.
    pub fn sweep_expired(&self) -> usize {
        let now = Instant::now();
        let mut map = self.0.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let before = map.len();
        map.retain(|_, s| s.try_lock().map_or(true, |g| g.expires > now));
        before - map.len()
    }

    pub(crate) fn journal(&self, entries: &[JournalEntry]) {
        if let Some(j) = &self.0.journal {
            if let Err(e) = j.append(entries) {
                log::warn!("journal write failed: {e}");
            }
        }
    }
}

fn cors(origin: Option<&str>) -> CorsLayer {
    let allow = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(v) => AllowOrigin::exact(v),
        None => AllowOrigin::any(),
    };
    CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE])
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/api/v1/ingest", post(api::ingest))
        .route("/api/v1/kb", get(api::kb_info))
        .route("/api/v1/sessions", post(api::create_session))
        .route("/api/v1/sessions/{id}", get(api::get_session))
        .route("/api/v1/sessions/{id}/feedback", post(api::feedback))
        .route("/api/v1/lus", get(api::search_lus))
        .route("/api/v1/lus/{id}", get(api::get_lu))
        .route_layer(middleware::from_fn_with_state(state.clone(), api::require_token));
    let mut app = Router::new()
        .route("/api/v1/spec", get(api::spec))
        .route("/api/v1/health", get(api::health))
        .merge(protected);
    if let Some(dir) = &state.0.config.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.layer(cors(state.0.config.ui_origin.as_deref())).with_state(state)
}

/// Binds the configured port and serves until ctrl-c.
pub async fn serve(state: AppState) -> Result<(), ServerError> {
    let addr = SocketAddr::from(([0, 0, 0, 0], state.config().port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {addr}");
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.sweep_expired();
            if n > 0 {
                log::info!("expired {n} sessions");
            }
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
