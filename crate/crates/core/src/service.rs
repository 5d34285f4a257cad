//! HTTP service over a loaded scene and checkpoint: views, renders, and
//! asynchronous edit sessions.
//!
//! Fine-tunes run on a blocking worker that publishes a parameter snapshot
//! after every step; renders always read a whole snapshot, never a partial one.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::codec::hex;
use crate::editing::{create_session, EditConfig, EditSession, SessionStatus};
use crate::error::Error;
use crate::image::Image;
use crate::render::{EditParams, PoseKey, Renderer, Shading};
use crate::scene::{Camera, Scene};

/// Environment variable holding the bind address.
pub const BIND_ENV: &str = "GSRECOLOR_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// Bind address from [`BIND_ENV`], else [`DEFAULT_BIND`].
pub fn bind_address() -> String {
    std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string())
}

#[derive(Clone, Debug, Serialize)]
pub struct StatusInfo {
    pub status: SessionStatus,
    pub steps_done: usize,
    pub loss: Option<f64>,
    pub error: Option<String>,
}

struct SessionSlot {
    session: Mutex<EditSession>,
    snapshot: RwLock<Arc<EditParams>>,
    status: Mutex<StatusInfo>,
    running: AtomicBool,
}

impl SessionSlot {
    fn new(session: EditSession) -> Self {
        let status = StatusInfo {
            status: session.status,
            steps_done: session.steps_done,
            loss: session.loss,
            error: None,
        };
        Self {
            snapshot: RwLock::new(Arc::new(session.params.clone())),
            session: Mutex::new(session),
            status: Mutex::new(status),
            running: AtomicBool::new(false),
        }
    }

    fn snapshot(&self) -> Arc<EditParams> {
        self.snapshot.read().unwrap().clone()
    }
}

/// A loaded scene and checkpoint with the session table.
pub struct Loaded {
    pub renderer: Arc<Renderer>,
    pub checkpoint_hash: [u8; 32],
    pub edit_config: EditConfig,
    /// When set, sessions are written here after every change.
    pub session_dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    next_id: AtomicU64,
}

impl Loaded {
    pub fn new(scene: Scene, checkpoint: &Checkpoint) -> crate::Result<Self> {
        if checkpoint.scene_hash != scene.geometry_hash() {
            return Err(Error::contract("checkpoint was trained on a different scene"));
        }
        let hash = checkpoint.hash()?;
        let renderer = Renderer::new(Arc::new(scene), Arc::new(checkpoint.model.clone()));
        Ok(Self {
            renderer: Arc::new(renderer),
            checkpoint_hash: hash,
            edit_config: EditConfig::default(),
            session_dir: None,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    /// Load every `*.vgss` session file in `dir` and persist future changes there.
    pub fn with_session_dir(mut self, dir: PathBuf) -> crate::Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "vgss"))
            .collect();
        entries.sort();
        {
            let mut table = self.sessions.lock().unwrap();
            for path in entries {
                let s = EditSession::load(&path, &self.renderer, self.checkpoint_hash)?;
                if let Some(n) = s.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                    self.next_id.fetch_max(n + 1, Ordering::SeqCst);
                }
                table.insert(s.id.clone(), Arc::new(SessionSlot::new(s)));
            }
        }
        self.session_dir = Some(dir);
        Ok(self)
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }

    fn persist(&self, session: &EditSession) -> crate::Result<()> {
        if let Some(dir) = &self.session_dir {
            session.save(dir.join(format!("{}.vgss", session.id)))?;
        }
        Ok(())
    }
}

/// Shared service state; empty until a checkpoint is loaded.
#[derive(Clone, Default)]
pub struct AppState {
    loaded: Arc<RwLock<Option<Arc<Loaded>>>>,
}

impl AppState {
    pub fn new(loaded: Option<Loaded>) -> Self {
        Self {
            loaded: Arc::new(RwLock::new(loaded.map(Arc::new))),
        }
    }

    pub fn set(&self, loaded: Loaded) {
        *self.loaded.write().unwrap() = Some(Arc::new(loaded));
    }

    fn get(&self) -> Result<Arc<Loaded>, ApiError> {
        self.loaded
            .read()
            .unwrap()
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no checkpoint loaded"))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Config(_) | Error::Contract(_) | Error::Format(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn png_response(bytes: Vec<u8>, extra: &[(&'static str, String)]) -> Response {
    let mut resp = Response::new(Body::from(bytes));
    resp.headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    for (k, v) in extra {
        if let Ok(v) = HeaderValue::from_str(v) {
            resp.headers_mut().insert(*k, v);
        }
    }
    resp
}

/// Parse a pose given as a JSON array of 12 numbers or as 12 comma-separated numbers.
pub fn parse_pose(text: &str) -> Result<[f64; 12], Error> {
    let t = text.trim();
    let values: Vec<f64> = if t.starts_with('[') {
        serde_json::from_str(t).map_err(|e| Error::contract(format!("malformed pose: {e}")))?
    } else {
        t.split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::contract(format!("malformed pose: {e}")))?
    };
    let pose: [f64; 12] = values
        .try_into()
        .map_err(|v: Vec<f64>| Error::contract(format!("pose needs 12 numbers, got {}", v.len())))?;
    if pose.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("pose has non-finite entries"));
    }
    let r = [
        [pose[0], pose[1], pose[2]],
        [pose[4], pose[5], pose[6]],
        [pose[8], pose[9], pose[10]],
    ];
    if crate::math::orthonormality_error(&r) > 1e-6 {
        return Err(Error::contract("pose rotation is not orthonormal"));
    }
    Ok(pose)
}

#[derive(Debug, Deserialize)]
pub struct RenderQuery {
    pub pose: String,
    pub w: Option<usize>,
    pub h: Option<usize>,
    pub s: Option<f64>,
    pub session: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct MaskQuery {
    pub pose: Option<String>,
    pub w: Option<usize>,
    pub h: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct EditRequest {
    pub view_id: u32,
    /// Base64 PNG.
    pub image: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct FinetuneRequest {
    pub steps: Option<usize>,
}

fn camera_json(view_id: u32, c: &Camera) -> serde_json::Value {
    json!({
        "view_id": view_id,
        "camera": {
            "width": c.width, "height": c.height,
            "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
            "pose": c.pose(),
        },
        "thumbnail_url": format!("/views/{view_id}/thumbnail"),
    })
}

async fn list_views(State(app): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    let l = app.get()?;
    let views: Vec<_> = l
        .renderer
        .scene
        .views
        .iter()
        .map(|v| camera_json(v.view_id, &v.camera))
        .collect();
    Ok(Json(serde_json::Value::Array(views)))
}

async fn thumbnail(State(app): State<AppState>, Path(id): Path<u32>) -> ApiResult<Response> {
    let l = app.get()?;
    let view = l.renderer.scene.view(id)?;
    Ok(png_response(view.pixels.encode_png()?, &[]))
}

fn camera_from_query(l: &Loaded, pose: &str, w: Option<usize>, h: Option<usize>) -> ApiResult<Camera> {
    let pose = parse_pose(pose)?;
    let reference = &l
        .renderer
        .scene
        .views
        .first()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "scene has no views"))?
        .camera;
    let (w, h) = (w.unwrap_or(reference.width), h.unwrap_or(reference.height));
    Ok(l.renderer.camera_for_pose(&pose, w, h)?)
}

async fn render(State(app): State<AppState>, Query(q): Query<RenderQuery>) -> ApiResult<Response> {
    let l = app.get()?;
    let camera = camera_from_query(&l, &q.pose, q.w, q.h)?;
    let s = q.s.unwrap_or(1.0);
    if !(s >= 0.0 && s.is_finite()) {
        return Err(ApiError::bad_request("s must be a finite value >= 0"));
    }
    let params = match &q.session {
        Some(id) => Some(l.slot(id)?.snapshot()),
        None => None,
    };
    let key = PoseKey::of(&camera).digest();
    let started = Instant::now();
    let (png, hit) = tokio::task::spawn_blocking(move || -> crate::Result<(Vec<u8>, bool)> {
        let (_, hit) = l.renderer.blends.get(&l.renderer.scene, &camera)?;
        let shading = match &params {
            Some(p) => Shading::Edited { params: p, s },
            None => Shading::Base { s },
        };
        Ok((l.renderer.render(&camera, shading)?.encode_png()?, hit))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(png_response(
        png,
        &[
            ("x-pose-hash", key),
            ("x-blend-cache", if hit { "hit" } else { "miss" }.to_string()),
            ("x-render-ms", format!("{:.3}", started.elapsed().as_secs_f64() * 1e3)),
        ],
    ))
}

fn decode_image(b64: &str) -> ApiResult<Image> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::bad_request(format!("image is not valid base64: {e}")))?;
    Ok(Image::decode_png(&bytes)?)
}

async fn create(State(app): State<AppState>, Json(req): Json<EditRequest>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let l = app.get()?;
    let image = decode_image(&req.image)?;
    let id = format!("s{}", l.next_id.fetch_add(1, Ordering::SeqCst));
    let session = create_session(&l.renderer, l.checkpoint_hash, id.clone(), req.view_id, &image, l.edit_config.clone())?;
    l.persist(&session)?;
    let status = session.status;
    l.sessions.lock().unwrap().insert(id.clone(), Arc::new(SessionSlot::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "status": status }))))
}

async fn add_edit(State(app): State<AppState>, Path(id): Path<String>, Json(req): Json<EditRequest>) -> ApiResult<Json<serde_json::Value>> {
    let l = app.get()?;
    let slot = l.slot(&id)?;
    if slot.running.load(Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "a fine-tune is running"));
    }
    let image = decode_image(&req.image)?;
    let mut s = slot.session.lock().unwrap();
    s.add_edit_view(&l.renderer, req.view_id, &image)?;
    l.persist(&s)?;
    Ok(Json(json!({ "session_id": id, "edit_views": s.edit_views.iter().map(|v| v.view_id).collect::<Vec<_>>() })))
}

async fn finetune(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Option<Json<FinetuneRequest>>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let l = app.get()?;
    let slot = l.slot(&id)?;
    if slot.running.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::CONFLICT, "a fine-tune is already running"));
    }
    let steps = body.and_then(|b| b.0.steps);
    let mut session = slot.session.lock().unwrap().clone();
    slot.status.lock().unwrap().status = SessionStatus::Running;
    let worker_slot = slot.clone();
    tokio::task::spawn_blocking(move || {
        let slot = worker_slot;
        let result = session.finetune_with(&l.renderer, steps, |p, params| {
            *slot.snapshot.write().unwrap() = Arc::new(params.clone());
            let mut st = slot.status.lock().unwrap();
            st.steps_done = p.step;
            st.loss = Some(p.loss);
        });
        *slot.snapshot.write().unwrap() = Arc::new(session.params.clone());
        let error = result.err().map(|e| e.to_string());
        let _ = l.persist(&session);
        *slot.status.lock().unwrap() = StatusInfo {
            status: session.status,
            steps_done: session.steps_done,
            loss: session.loss,
            error,
        };
        *slot.session.lock().unwrap() = session;
        slot.running.store(false, Ordering::SeqCst);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "session_id": id, "status": SessionStatus::Running }))))
}

async fn status(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StatusInfo>> {
    let l = app.get()?;
    let slot = l.slot(&id)?;
    let st = slot.status.lock().unwrap().clone();
    Ok(Json(st))
}

async fn mask(State(app): State<AppState>, Path(id): Path<String>, Query(q): Query<MaskQuery>) -> ApiResult<Response> {
    let l = app.get()?;
    let slot = l.slot(&id)?;
    let camera = match &q.pose {
        Some(p) => camera_from_query(&l, p, q.w, q.h)?,
        None => {
            let first = slot.session.lock().unwrap().edit_views[0].view_id;
            l.renderer.scene.view(first)?.camera.clone()
        }
    };
    let params = slot.snapshot();
    let png = tokio::task::spawn_blocking(move || -> crate::Result<Vec<u8>> {
        l.renderer.render_mask(&camera, &params)?.encode_png()
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(png_response(png, &[]))
}

async fn describe(State(app): State<AppState>) -> Json<serde_json::Value> {
    let loaded = app.get().ok().map(|l| hex(&l.checkpoint_hash));
    Json(json!({
        "service": "gsrecolor",
        "checkpoint": loaded,
        "pose_format": "row-major world-to-camera 3x4: JSON array of 12 numbers, or 12 comma-separated numbers",
        "endpoints": [
            { "method": "GET", "path": "/views", "returns": "JSON list of {view_id, camera, thumbnail_url}" },
            { "method": "GET", "path": "/views/{id}/thumbnail", "returns": "PNG" },
            { "method": "GET", "path": "/render", "query": ["pose", "w?", "h?", "s?", "session?"], "returns": "PNG",
              "headers": ["x-pose-hash", "x-blend-cache", "x-render-ms"] },
            { "method": "POST", "path": "/sessions", "body": "{view_id, image: base64 PNG}", "returns": "{session_id, status}" },
            { "method": "POST", "path": "/sessions/{id}/edits", "body": "{view_id, image: base64 PNG}" },
            { "method": "POST", "path": "/sessions/{id}/finetune", "body": "{steps?}", "errors": { "409": "already running" } },
            { "method": "GET", "path": "/sessions/{id}/status", "returns": "{status, steps_done, loss, error}" },
            { "method": "GET", "path": "/sessions/{id}/mask", "query": ["pose?", "w?", "h?"], "returns": "grayscale PNG" },
            { "method": "GET", "path": "/spec", "returns": "this document" }
        ],
        "errors": { "400": "malformed request", "404": "unknown view or session", "409": "conflict", "503": "no checkpoint loaded" }
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/views", get(list_views))
        .route("/views/{id}/thumbnail", get(thumbnail))
        .route("/render", get(render))
        .route("/sessions", post(create))
        .route("/sessions/{id}/edits", post(add_edit))
        .route("/sessions/{id}/finetune", post(finetune))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/mask", get(mask))
        .route("/spec", get(describe))
        .with_state(state)
}

/// Serve until the process is stopped.
pub async fn serve(state: AppState, bind: &str) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}
