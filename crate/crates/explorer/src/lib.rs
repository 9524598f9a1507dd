//! Local HTTP service over an illuminated-tree [`Session`]: serves the
//! latest tree, feature visualizations, example images and metrics, and
//! accepts exclude-and-rebuild requests.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/tree` | latest illuminated tree and its history index |
//! | GET | `/api/metrics` | accuracies of the latest entry |
//! | GET | `/api/history` | exclusion and accuracy timeline |
//! | GET | `/api/node/{id}/examples` | example images routed through a node |
//! | GET | `/api/feature/{name}/viz.png` | visualization of a `r_c_ch` feature |
//! | GET | `/api/image/{split}/{row}` | an example image |
//! | POST | `/api/rebuild` | refit with `{excluded, max_depth?}` |
//! | GET | `/tree.svg`, `/viz/{file}` | rendered tree and its assets |
//!
//! Everything else is served from the static directory, when one is set.

use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use idt_core::cellcrop::Split;
use idt_core::featviz::VizKey;
use idt_core::illuminate::{IlluminatedTree, NodeObjective, Session, TreeMetrics};
use idt_core::model::{feature_index, parse_feature_name};
use idt_core::Error;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

#[derive(Debug, Clone)]
pub struct ServerOptions {
    /// Compute missing feature visualizations on request instead of 404.
    pub on_demand_viz: bool,
    pub static_dir: Option<PathBuf>,
    pub examples_per_node: usize,
    /// Pause inserted before each rebuild's fit. Test hook.
    pub fit_delay: Option<Duration>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            on_demand_viz: true,
            static_dir: None,
            examples_per_node: 9,
            fit_delay: None,
        }
    }
}

struct Inner {
    session: RwLock<Option<Arc<Session>>>,
    rebuild: Arc<tokio::sync::Mutex<()>>,
    options: ServerOptions,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// State with no session yet; API routes answer 503 until one is set.
    pub fn loading(options: ServerOptions) -> Self {
        Self(Arc::new(Inner {
            session: RwLock::new(None),
            rebuild: Arc::new(tokio::sync::Mutex::new(())),
            options,
        }))
    }

    pub fn with_session(session: Session, options: ServerOptions) -> Self {
        let s = Self::loading(options);
        s.set_session(session);
        s
    }

    pub fn set_session(&self, session: Session) {
        *self.0.session.write().expect("session lock") = Some(Arc::new(session));
    }

    fn session(&self) -> Result<Arc<Session>, ApiError> {
        self.0
            .session
            .read()
            .expect("session lock")
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session is still loading"))
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

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::BadFeatureName(_) | Error::OutOfRange { .. } | Error::Config(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Serialize)]
pub struct TreeResponse<'a> {
    pub history_index: usize,
    pub tree: &'a IlluminatedTree,
}

#[derive(Serialize)]
struct MetricsResponse<'a> {
    history_index: usize,
    #[serde(flatten)]
    metrics: &'a TreeMetrics,
}

#[derive(Serialize)]
struct HistoryItem<'a> {
    index: usize,
    requested: &'a [String],
    excluded: &'a [String],
    max_depth: usize,
    root_feature: Option<&'a str>,
    n_nodes: usize,
    metrics: &'a TreeMetrics,
}

#[derive(Serialize)]
struct ExampleItem {
    url: String,
    path: String,
    label: usize,
    class: String,
    split: Split,
    row: usize,
}

#[derive(Deserialize)]
pub struct RebuildRequest {
    #[serde(default)]
    pub excluded: Vec<String>,
    pub max_depth: Option<usize>,
}

async fn get_tree(State(state): State<AppState>) -> ApiResult<Response> {
    let s = state.session()?;
    let entry = s.latest();
    Ok(Json(TreeResponse {
        history_index: entry.index,
        tree: &entry.itree,
    })
    .into_response())
}

async fn get_metrics(State(state): State<AppState>) -> ApiResult<Response> {
    let s = state.session()?;
    let entry = s.latest();
    Ok(Json(MetricsResponse {
        history_index: entry.index,
        metrics: &entry.itree.metrics,
    })
    .into_response())
}

async fn get_history(State(state): State<AppState>) -> ApiResult<Response> {
    let s = state.session()?;
    let history = s.history();
    let entries: Vec<HistoryItem> = history
        .iter()
        .map(|e| HistoryItem {
            index: e.index,
            requested: &e.requested,
            excluded: &e.itree.excluded,
            max_depth: e.max_depth,
            root_feature: e.itree.nodes[0].feature_name.as_deref(),
            n_nodes: e.itree.tree.nodes.len(),
            metrics: &e.itree.metrics,
        })
        .collect();
    Ok(Json(serde_json::json!({ "entries": entries })).into_response())
}

async fn get_node_examples(State(state): State<AppState>, Path(id): Path<usize>) -> ApiResult<Response> {
    let s = state.session()?;
    let entry = s.latest();
    let tree = &entry.itree.tree;
    if id >= tree.nodes.len() {
        return Err(ApiError::not_found(format!("no node {id}")));
    }
    let examples: Vec<ExampleItem> = s
        .node_examples(tree, id, state.0.options.examples_per_node)?
        .into_iter()
        .map(|e| ExampleItem {
            url: format!("/api/image/{}/{}", e.split.as_str(), e.row),
            class: tree.class_order[e.label].clone(),
            path: e.path,
            label: e.label,
            split: e.split,
            row: e.row,
        })
        .collect();
    Ok(Json(serde_json::json!({
        "node_id": id,
        "history_index": entry.index,
        "examples": examples,
    }))
    .into_response())
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("svg") => "image/svg+xml",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn send_file(path: PathBuf) -> ApiResult<Response> {
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::not_found("no such file")),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn get_image(State(state): State<AppState>, Path((split, row)): Path<(String, usize)>) -> ApiResult<Response> {
    let s = state.session()?;
    let split: Split = split
        .parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown split `{split}`")))?;
    let path = s
        .image_path(split, row)
        .ok_or_else(|| ApiError::not_found(format!("no {} row {row}", split.as_str())))?;
    send_file(path).await
}

async fn get_feature_viz(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult<Response> {
    let s = state.session()?;
    let id = parse_feature_name(&name)?;
    let layer = s.model().feature_layer().to_string();
    let shape = s.model().layer_shape(&layer)?;
    if feature_index(id, shape).is_err() {
        return Err(ApiError::not_found(format!("feature {name} is outside layer {layer}")));
    }
    let key = match s.config().options.objective {
        NodeObjective::ChannelMean => VizKey::channel(&layer, id.channel),
        NodeObjective::Positioned => VizKey::positioned(&layer, id.row, id.col, id.channel),
    };
    if s.viz().get(&key).is_none() {
        if !state.0.options.on_demand_viz {
            return Err(ApiError::not_found(format!("feature {name} has not been visualized")));
        }
        let (s2, k2) = (s.clone(), key.clone());
        tokio::task::spawn_blocking(move || s2.viz().get_or_compute(s2.model(), &k2))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    }
    let bytes = s
        .viz()
        .png_bytes(&key)?
        .ok_or_else(|| ApiError::not_found(format!("feature {name} has not been visualized")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn post_rebuild(State(state): State<AppState>, Json(req): Json<RebuildRequest>) -> ApiResult<Response> {
    let s = state.session()?;
    let Ok(guard) = state.0.rebuild.clone().try_lock_owned() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "a rebuild is already in progress"));
    };
    let delay = state.0.options.fit_delay;
    let entry = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        if let Some(d) = delay {
            std::thread::sleep(d);
        }
        s.rebuild_with_exclusions(&req.excluded, req.max_depth)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(TreeResponse {
        history_index: entry.index,
        tree: &entry.itree,
    })
    .into_response())
}

async fn get_tree_svg(State(state): State<AppState>) -> ApiResult<Response> {
    let s = state.session()?;
    send_file(s.dir().join("tree.svg")).await
}

async fn get_viz_file(State(state): State<AppState>, Path(file): Path<String>) -> ApiResult<Response> {
    let s = state.session()?;
    if file.contains(['/', '\\']) || file.starts_with('.') {
        return Err(ApiError::not_found("no such file"));
    }
    let dir = s.viz().dir().ok_or_else(|| ApiError::not_found("no visualization directory"))?;
    send_file(dir.join(file)).await
}

const INDEX_HTML: &str = r#"<!doctype html>
<html><head><meta charset="utf-8"><title>Illuminated decision tree</title></head>
<body style="font-family:sans-serif">
<p><a href="/api/tree">/api/tree</a> · <a href="/api/metrics">/api/metrics</a> · <a href="/api/history">/api/history</a></p>
<object data="/tree.svg" type="image/svg+xml"></object>
</body></html>
"#;

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/tree", get(get_tree))
        .route("/api/metrics", get(get_metrics))
        .route("/api/history", get(get_history))
        .route("/api/node/{id}/examples", get(get_node_examples))
        .route("/api/feature/{name}/viz.png", get(get_feature_viz))
        .route("/api/image/{split}/{row}", get(get_image))
        .route("/api/rebuild", post(post_rebuild))
        .route("/tree.svg", get(get_tree_svg))
        .route("/viz/{file}", get(get_viz_file));
    let api = match &state.0.options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(INDEX_HTML) })),
    };
    api.with_state(state)
}

/// Binds `addr`, loads the session in the background and serves until
/// Ctrl-C. Fails if the session cannot be opened.
pub async fn serve(addr: SocketAddr, session_dir: PathBuf, options: ServerOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, session_dir, options).await
}

/// [`serve`] on an already bound listener.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    session_dir: PathBuf,
    options: ServerOptions,
) -> std::io::Result<()> {
    let state = AppState::loading(options);
    log::info!("listening on http://{}", listener.local_addr()?);

    let loader = state.clone();
    let load = tokio::task::spawn_blocking(move || {
        let s = Session::open(&session_dir)?;
        log::info!("session {} loaded", session_dir.display());
        loader.set_session(s);
        Ok::<_, Error>(())
    });
    let (failed_tx, failed_rx) = tokio::sync::oneshot::channel::<String>();
    tokio::spawn(async move {
        let msg = match load.await {
            Ok(Ok(())) => return,
            Ok(Err(e)) => e.to_string(),
            Err(e) => e.to_string(),
        };
        let _ = failed_tx.send(msg);
    });
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<Option<String>>();
    tokio::spawn(async move {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => { let _ = stop_tx.send(None); }
            Ok(msg) = failed_rx => { let _ = stop_tx.send(Some(msg)); }
        }
    });
    let (reason_tx, reason_rx) = tokio::sync::oneshot::channel::<Option<String>>();
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async move {
            let reason = stop_rx.await.unwrap_or(None);
            let _ = reason_tx.send(reason);
        })
        .await?;
    match reason_rx.await {
        Ok(Some(msg)) => Err(std::io::Error::other(format!("cannot open session: {msg}"))),
        _ => Ok(()),
    }
}
