//! HTTP + WebSocket render service.
//!
//! Each session owns a [`Runtime`] (its own cache and prefetcher). A stream
//! renders one POV at a time; POVs arriving meanwhile replace each other so
//! only the latest is rendered next.

use std::collections::{BTreeMap, HashMap};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use mrvol_core::{LodTable, RenderParams, TransferFunction};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use crate::cache::CacheStats;
use crate::error::Error;
use crate::io::{encode_png, PovRecord};
use crate::report::{summarize, Summary};
use crate::runtime::{
    BlockCache, FrameTiming, PrefetchMode, RenderingDone, Runtime, RuntimeConfig, StepOutput, DEFAULT_CAPACITY,
};
use crate::store::Store;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory holding the store (or stores, as subdirectories).
    pub root: PathBuf,
    pub max_sessions: usize,
    /// Allowed browser origin; `None` allows any.
    pub cors_origin: Option<String>,
}

struct Session {
    runtime: Mutex<Runtime>,
    done: Arc<RenderingDone>,
    cache: Arc<BlockCache>,
    records: Mutex<Vec<FrameTiming>>,
    streaming: AtomicBool,
    width: u32,
    height: u32,
}

impl Session {
    fn step(&self, pov: mrvol_core::PointOfView) -> Result<(StepOutput, Vec<u8>), Error> {
        let mut rt = self.runtime.lock().unwrap_or_else(|p| p.into_inner());
        let out = rt.step(pov)?;
        let png = encode_png(&out.frame)?;
        self.records.lock().unwrap_or_else(|p| p.into_inner()).push(out.timing);
        Ok((out, png))
    }
}

pub struct AppState {
    cfg: ServiceConfig,
    sessions: Mutex<HashMap<u64, Arc<Session>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState { cfg, sessions: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1) })
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, HashMap<u64, Arc<Session>>> {
        self.sessions.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn session(&self, id: u64) -> Option<Arc<Session>> {
        self.sessions().get(&id).cloned()
    }

    /// Number of live sessions.
    pub fn session_count(&self) -> usize {
        self.sessions().len()
    }

    fn store_dir(&self, rel: Option<&str>) -> Result<PathBuf, ApiError> {
        let Some(rel) = rel.filter(|r| !r.is_empty()) else { return Ok(self.cfg.root.clone()) };
        let p = Path::new(rel);
        if !p.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(ApiError(
                StatusCode::BAD_REQUEST,
                format!("store path {rel:?} must be relative to the service root"),
            ));
        }
        Ok(self.cfg.root.join(p))
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

/// A preset name or a full transfer function.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TfSpec {
    Preset(String),
    Custom(TransferFunction),
}

pub fn tf_presets(value_range: [f32; 2]) -> BTreeMap<&'static str, TransferFunction> {
    let mut lo = value_range[0] as f64;
    let mut hi = value_range[1] as f64;
    if hi <= lo || hi.is_nan() || lo.is_nan() {
        lo -= 0.5;
        hi += 0.5;
    }
    let mid = 0.5 * (lo + hi);
    let mut m = BTreeMap::new();
    m.insert("ml-shells", TransferFunction::ml_shells());
    if let Ok(t) = TransferFunction::grey_ramp([lo, hi], 0.05) {
        m.insert("grey-ramp", t);
    }
    if let Ok(t) = TransferFunction::iso_shell([lo, hi], mid, 0.05 * (hi - lo), 0.3, [0.9, 0.6, 0.2]) {
        m.insert("mid-shell", t);
    }
    m
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateSession {
    pub store: Option<String>,
    pub tf: Option<TfSpec>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub sample_distance: Option<f64>,
    pub o_max: Option<f64>,
    pub capacity: Option<usize>,
    pub prefetch: Option<PrefetchMode>,
    pub lod_thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: u64,
    pub width: u32,
    pub height: u32,
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> Result<Json<SessionCreated>, ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let dir = st.store_dir(req.store.as_deref())?;
    let store = tokio::task::spawn_blocking(move || Store::open(&dir))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError(StatusCode::NOT_FOUND, e.to_string()))?;
    let tf = match req.tf {
        None => TransferFunction::ml_shells(),
        Some(TfSpec::Custom(t)) => t,
        Some(TfSpec::Preset(name)) => tf_presets(store.manifest().value_range)
            .remove(name.as_str())
            .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, format!("unknown transfer function preset {name:?}")))?,
    };
    let d = RenderParams::default();
    let params = RenderParams {
        width: req.width.unwrap_or(d.width),
        height: req.height.unwrap_or(d.height),
        sample_distance: req.sample_distance.unwrap_or(d.sample_distance),
        o_max: req.o_max.unwrap_or(d.o_max),
        ..d
    };
    params.validate().map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let table = match req.lod_thresholds {
        Some(t) => LodTable::new(t).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?,
        None => LodTable::default(),
    };
    let capacity = req.capacity.unwrap_or(DEFAULT_CAPACITY);
    if capacity == 0 {
        return Err(ApiError(StatusCode::BAD_REQUEST, "capacity must be positive".into()));
    }
    let cfg = RuntimeConfig { tf, params, table, capacity, prefetch: req.prefetch.unwrap_or(PrefetchMode::Linear) };
    let runtime = Runtime::new(Arc::new(store), cfg);
    let session = Session {
        done: runtime.rendering_done(),
        cache: runtime.cache().clone(),
        runtime: Mutex::new(runtime),
        records: Mutex::new(Vec::new()),
        streaming: AtomicBool::new(false),
        width: params.width,
        height: params.height,
    };
    let mut sessions = st.sessions();
    if sessions.len() >= st.cfg.max_sessions {
        return Err(ApiError(
            StatusCode::SERVICE_UNAVAILABLE,
            format!("session limit {} reached", st.cfg.max_sessions),
        ));
    }
    let id = st.next_id.fetch_add(1, Ordering::Relaxed);
    sessions.insert(id, Arc::new(session));
    log::info!("session {id} created");
    Ok(Json(SessionCreated { id, width: params.width, height: params.height }))
}

async fn delete_session(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> Result<StatusCode, ApiError> {
    let s = st.sessions().remove(&id).ok_or_else(|| not_found(id))?;
    s.done.set();
    Ok(StatusCode::NO_CONTENT)
}

fn not_found(id: u64) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no session {id}"))
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionStats {
    pub id: u64,
    pub summary: Summary,
    pub cache: CacheStats,
    pub records: Vec<FrameTiming>,
}

async fn session_stats(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<u64>,
) -> Result<Json<SessionStats>, ApiError> {
    let s = st.session(id).ok_or_else(|| not_found(id))?;
    let records = s.records.lock().unwrap_or_else(|p| p.into_inner()).clone();
    let cache = s.cache.stats();
    Ok(Json(SessionStats { id, summary: summarize(&records), cache, records }))
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestInfo {
    pub backend: mrvol_core::lod::Backend,
    pub levels: u32,
    pub blocks_per_level: Vec<usize>,
    pub total_blocks: usize,
    pub total_bytes: u64,
    pub volume_dims: [usize; 3],
    pub micro_dims: [usize; 3],
    pub value_range: [f32; 2],
    pub physical_bounds: mrvol_core::Aabb,
    pub degree: usize,
    pub error_bound: f64,
    pub tf_presets: BTreeMap<String, TransferFunction>,
}

async fn manifest(State(st): State<Arc<AppState>>) -> Result<Json<ManifestInfo>, ApiError> {
    let dir = st.cfg.root.clone();
    let store = tokio::task::spawn_blocking(move || Store::open(&dir))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError(StatusCode::NOT_FOUND, e.to_string()))?;
    let m = store.manifest();
    let l = &m.layout;
    Ok(Json(ManifestInfo {
        backend: m.backend,
        levels: l.levels,
        blocks_per_level: (1..=l.levels).map(|lod| l.addresses(lod).len()).collect(),
        total_blocks: l.total_blocks(),
        total_bytes: m.total_bytes(),
        volume_dims: l.volume_dims,
        micro_dims: l.micro_dims,
        value_range: m.value_range,
        physical_bounds: m.physical_bounds,
        degree: m.degree,
        error_bound: m.error_bound,
        tf_presets: tf_presets(m.value_range).into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }))
}

/// Server-to-client stream message.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Frame {
        /// Index of the POV among the valid POVs received on this stream.
        seq: u64,
        width: u32,
        height: u32,
        png: String,
        timing: FrameTiming,
        miss_rate: f64,
        visible: Vec<String>,
    },
    Error {
        message: String,
    },
}

async fn stream(ws: WebSocketUpgrade, State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> Response {
    let Some(session) = st.session(id) else { return not_found(id).into_response() };
    if session.streaming.swap(true, Ordering::SeqCst) {
        return ApiError(StatusCode::CONFLICT, format!("session {id} already has a stream")).into_response();
    }
    ws.on_upgrade(move |socket| run_stream(socket, st, id, session))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("message serializes");
    socket.send(Message::Text(text.into())).await.is_ok()
}

type StepResult = Result<(StepOutput, Vec<u8>), Error>;

async fn run_stream(mut socket: WebSocket, st: Arc<AppState>, id: u64, session: Arc<Session>) {
    let mut received = 0u64;
    let mut pending: Option<(u64, mrvol_core::PointOfView)> = None;
    let mut inflight: Option<tokio::task::JoinHandle<(u64, StepResult)>> = None;
    loop {
        if inflight.is_none() {
            if let Some((seq, pov)) = pending.take() {
                let s = session.clone();
                inflight = Some(tokio::task::spawn_blocking(move || (seq, s.step(pov))));
            }
        }
        tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let parsed = serde_json::from_str::<PovRecord>(&text)
                        .map_err(|e| e.to_string())
                        .and_then(|r| r.to_pov().map_err(|e| e.to_string()));
                    match parsed {
                        Ok(pov) => {
                            pending = Some((received, pov));
                            received += 1;
                        }
                        Err(e) => {
                            if !send(&mut socket, &ServerMessage::Error { message: format!("bad POV: {e}") }).await {
                                break;
                            }
                        }
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    if !send(&mut socket, &ServerMessage::Error { message: "expected a text POV message".into() }).await {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            done = async { inflight.as_mut().expect("guarded").await }, if inflight.is_some() => {
                inflight = None;
                let msg = match done {
                    Ok((seq, Ok((out, png)))) => ServerMessage::Frame {
                        seq,
                        width: session.width,
                        height: session.height,
                        png: base64::engine::general_purpose::STANDARD.encode(png),
                        miss_rate: out.timing.miss_rate,
                        timing: out.timing,
                        visible: out.visible.iter().map(|a| a.to_string()).collect(),
                    },
                    Ok((_, Err(e))) => ServerMessage::Error { message: e.to_string() },
                    Err(e) => ServerMessage::Error { message: format!("render task failed: {e}") },
                };
                if !send(&mut socket, &msg).await {
                    break;
                }
            }
        }
    }
    // Disconnected: stop prefetching now and drop the session.
    session.done.set();
    st.sessions().remove(&id);
    log::info!("session {id} closed");
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match &state.cfg.cors_origin {
        Some(o) => match o.parse::<HeaderValue>() {
            Ok(v) => CorsLayer::new().allow_origin(v).allow_methods(Any).allow_headers(Any),
            Err(_) => {
                log::warn!("invalid CORS origin {o:?}; allowing any");
                CorsLayer::permissive()
            }
        },
        None => CorsLayer::permissive(),
    };
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", axum::routing::delete(delete_session))
        .route("/session/{id}/stream", get(stream))
        .route("/session/{id}/stats", get(session_stats))
        .route("/manifest", get(manifest))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, cfg: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(cfg))).await
}
