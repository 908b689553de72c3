//! HTTP API for interactive blending.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use pastiche_core::sweep::{interpolation_sweep, is_monotone, SweepRecord};
use pastiche_core::{imageio, BlendWeights, Checkpoint, FeatureExtractor, StyleTarget, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Result};
use crate::prep::{self, Preprocess};

const MAX_UPLOAD: usize = 64 << 20;
/// Upper bound on sweep frames per request.
pub const MAX_SWEEP_STEPS: usize = 64;

/// Everything a request needs. The model never changes while serving.
pub struct AppState {
    ckpt: Checkpoint,
    fx: FeatureExtractor<f32>,
    targets: BTreeMap<String, StyleTarget<f32>>,
    contents: RwLock<HashMap<String, Arc<Tensor<f32>>>>,
}

impl AppState {
    /// Builds style targets for every style with a readable image: registry
    /// sources that exist on disk, then explicit overrides.
    pub fn new(ckpt: Checkpoint, overrides: &[(String, std::path::PathBuf)]) -> Result<Self> {
        let fx = ckpt.feature_extractor()?;
        let mut sources = prep::style_sources(&ckpt, &[])?;
        sources.retain(|_, path| path.is_file());
        for (name, path) in overrides {
            ckpt.model.bank().index_of(name)?;
            sources.insert(name.clone(), path.clone());
        }
        let mut targets = BTreeMap::new();
        for name in sources.keys() {
            targets.insert(name.clone(), prep::target_for(&ckpt, &fx, &sources, name)?);
        }
        Ok(Self { ckpt, fx, targets, contents: RwLock::new(HashMap::new()) })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    fn content(&self, id: &str) -> Result<Arc<Tensor<f32>>> {
        self.contents
            .read()
            .expect("content map lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| CliError::UnknownContent(id.to_string()))
    }

    fn target(&self, name: &str) -> Result<&StyleTarget<f32>> {
        self.ckpt.model.bank().index_of(name)?;
        self.targets.get(name).ok_or_else(|| CliError::NoStyleImage(name.to_string()))
    }

    fn render(&self, content: &Tensor<f32>, weights: &BlendWeights) -> Result<Vec<u8>> {
        let vector = self.ckpt.model.bank().blend(weights)?;
        let pastiche = self.ckpt.model.stylize(content, &vector)?;
        Ok(imageio::encode_png(&pastiche)?)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/styles", get(styles))
        .route("/api/content", post(upload_content))
        .route("/api/blend", post(blend))
        .route("/api/stylize", get(stylize))
        .route("/api/sweep", post(sweep))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

pub async fn serve(state: AppState, bind: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| CliError::BadRequest(format!("bind {bind}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| CliError::BadRequest(e.to_string()))?;
    eprintln!("listening on http://{addr}");
    axum::serve(listener, router(Arc::new(state)))
        .await
        .map_err(|e| CliError::BadRequest(format!("server: {e}")))
}

/// Error responses are JSON: `{"error": kind, "message": text}`.
pub struct ApiError(CliError);

impl<E: Into<CliError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self.0.kind() {
            "unknown-style" | "unknown-content" => StatusCode::NOT_FOUND,
            "invalid-blend" | "shape" => StatusCode::UNPROCESSABLE_ENTITY,
            "unsupported-format" => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "no-style-image" => StatusCode::CONFLICT,
            "corrupt" | "truncated" | "bad-request" | "usage" | "config" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.0.kind(), "message": self.0.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(CliError::BadRequest(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(CliError::BadRequest(format!("invalid JSON body: {e}"))))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "styles": state.ckpt.model.bank().len() }))
}

#[derive(Serialize)]
struct StyleInfo {
    name: String,
    parameters: usize,
    lambda_s: Option<f64>,
    /// Whether the style image is loaded, which sweeps need.
    has_target: bool,
}

async fn styles(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let count = state.ckpt.model.count_parameters();
    let styles: Vec<StyleInfo> = state
        .ckpt
        .model
        .style_names()
        .iter()
        .map(|name| StyleInfo {
            name: name.clone(),
            parameters: count.per_style,
            lambda_s: state.ckpt.entry(name).lambda_s,
            has_target: state.targets.contains_key(name),
        })
        .collect();
    Json(json!({
        "shared": count.shared,
        "per_style": count.per_style,
        "fraction": count.fraction,
        "styles": styles,
    }))
}

#[derive(Debug, Default, Deserialize)]
struct ContentQuery {
    resize: Option<usize>,
    crop: Option<usize>,
}

async fn upload_content(
    State(state): State<Arc<AppState>>,
    Query(query): Query<ContentQuery>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let worker = state.clone();
    let (id, image) = blocking(move || {
        let image = imageio::decode_image(&body)?;
        let image = Preprocess { resize: query.resize, crop: query.crop }.apply(image)?;
        worker.ckpt.model.check_input(image.shape())?;
        Ok((prep::content_id(&image), image))
    })
    .await?;
    let (height, width) = (image.shape().h, image.shape().w);
    state.contents.write().expect("content map lock poisoned").entry(id.clone()).or_insert_with(|| Arc::new(image));
    Ok(Json(json!({ "id": id, "width": width, "height": height })))
}

/// Either `{"name": w, ...}` or the CLI form `"name=w,name=w"`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum WeightsBody {
    Map(BTreeMap<String, f64>),
    Text(String),
}

impl WeightsBody {
    fn parse(self) -> Result<BlendWeights> {
        Ok(match self {
            WeightsBody::Map(map) => BlendWeights::new(map)?,
            WeightsBody::Text(text) => text.parse()?,
        })
    }
}

#[derive(Debug, Deserialize)]
struct BlendRequest {
    content_id: String,
    weights: WeightsBody,
}

async fn blend(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let request: BlendRequest = parse_json(&body)?;
    let weights = request.weights.parse()?;
    let content = state.content(&request.content_id)?;
    let echo = weights.to_string();
    let bytes = blocking(move || state.render(&content, &weights)).await?;
    let mut response = png(bytes);
    if let Ok(value) = HeaderValue::from_str(&echo) {
        response.headers_mut().insert("x-blend-weights", value);
    }
    Ok(response)
}

#[derive(Debug, Deserialize)]
struct StylizeQuery {
    content_id: String,
    style: String,
}

async fn stylize(State(state): State<Arc<AppState>>, Query(query): Query<StylizeQuery>) -> ApiResult<Response> {
    state.ckpt.model.bank().index_of(&query.style)?;
    let content = state.content(&query.content_id)?;
    let weights = BlendWeights::single(query.style);
    let bytes = blocking(move || state.render(&content, &weights)).await?;
    Ok(png(bytes))
}

#[derive(Debug, Deserialize)]
struct SweepRequest {
    content_id: String,
    style_a: String,
    style_b: String,
    #[serde(default = "default_sweep_steps")]
    steps: usize,
}

fn default_sweep_steps() -> usize {
    5
}

#[derive(Serialize)]
struct SweepFrameBody {
    #[serde(flatten)]
    record: SweepRecord,
    /// Base64-encoded PNG.
    png: String,
}

async fn sweep(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let request: SweepRequest = parse_json(&body)?;
    if request.steps > MAX_SWEEP_STEPS {
        return Err(ApiError(CliError::BadRequest(format!("steps is capped at {MAX_SWEEP_STEPS}"))));
    }
    let content = state.content(&request.content_id)?;
    state.target(&request.style_a)?;
    state.target(&request.style_b)?;
    let frames = blocking(move || {
        let (a, b) = (state.target(&request.style_a)?, state.target(&request.style_b)?);
        let frames = interpolation_sweep(
            &state.ckpt.model,
            &state.fx,
            &content,
            (&request.style_a, a),
            (&request.style_b, b),
            request.steps,
        )?;
        frames
            .into_iter()
            .map(|f| Ok(SweepFrameBody { record: f.record(), png: BASE64.encode(imageio::encode_png(&f.pastiche)?) }))
            .collect::<Result<Vec<_>>>()
    })
    .await?;
    let records: Vec<SweepRecord> = frames.iter().map(|f| f.record.clone()).collect();
    let (monotone_a, monotone_b) = is_monotone(&records);
    Ok(Json(json!({ "frames": frames, "monotone_a": monotone_a, "monotone_b": monotone_b })))
}
