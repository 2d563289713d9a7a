//! HTTP routes of the studio service.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::engine;
use crate::error::StudioError;
use crate::registry::{ModelInfo, Registry};
use crate::store::{BoardItem, Origin, Provenance, Store};

pub const MAX_SAMPLES: usize = 64;
pub const MAX_VARIANTS: usize = 16;
pub const MAX_FRAMES: usize = 64;
pub const DEFAULT_TRUNCATION: f64 = 0.75;
pub const DEFAULT_VARIANTS: usize = 4;

#[derive(Clone)]
pub struct AppState {
    pub models: Arc<Registry>,
    pub store: Arc<Mutex<Store>>,
}

impl AppState {
    pub fn new(models: Registry, store: Store) -> Self {
        AppState {
            models: Arc::new(models),
            store: Arc::new(Mutex::new(store)),
        }
    }

    pub fn store(&self) -> MutexGuard<'_, Store> {
        // a panic while holding the lock cannot leave the store half-written: files are
        // renamed into place before the map is updated
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl From<StudioError> for ApiError {
    fn from(e: StudioError) -> Self {
        let status = match e.code() {
            "not_found" => StatusCode::NOT_FOUND,
            "invalid_request" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{e}");
        }
        ApiError {
            status,
            body: ErrorBody {
                code: e.code().to_string(),
                message: e.to_string(),
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        StudioError::Invalid(r.body_text()).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn invalid(msg: impl Into<String>) -> ApiError {
    StudioError::Invalid(msg.into()).into()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StudioError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| StudioError::Internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

fn fresh_seed() -> u64 {
    let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    t.as_nanos() as u64 & ((1 << 53) - 1)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub url: String,
    pub provenance: Provenance,
}

fn image_ref(id: String, provenance: Provenance) -> ImageRef {
    ImageRef {
        url: format!("/images/{id}.png"),
        id,
        provenance,
    }
}

/// Class given by index or by name.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

fn resolve_class(info: &ModelInfo, class: Option<ClassRef>) -> Result<Option<usize>, ApiError> {
    match class {
        None => Ok(None),
        Some(ClassRef::Index(i)) => Ok(Some(i)),
        Some(ClassRef::Name(name)) => info
            .classes
            .iter()
            .position(|c| c.eq_ignore_ascii_case(&name))
            .map(Some)
            .ok_or_else(|| invalid(format!("unknown class `{name}`"))),
    }
}

// ------------------------------------------------------------------ models

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelsResponse {
    pub models: Vec<ModelInfo>,
}

async fn list_models(State(app): State<AppState>) -> Json<ModelsResponse> {
    Json(ModelsResponse {
        models: app.models.infos(),
    })
}

// ------------------------------------------------------------------ sample

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleRequest {
    pub model: String,
    pub count: usize,
    pub class: Option<ClassRef>,
    pub truncation: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImagesResponse {
    pub images: Vec<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

async fn sample(State(app): State<AppState>, body: Result<Json<SampleRequest>, JsonRejection>) -> ApiResult<ImagesResponse> {
    let Json(req) = body?;
    let (entry, _) = app.models.gan(&req.model)?;
    if !(1..=MAX_SAMPLES).contains(&req.count) {
        return Err(invalid(format!("count must be in 1..={MAX_SAMPLES}, got {}", req.count)));
    }
    let psi = req.truncation.unwrap_or(DEFAULT_TRUNCATION);
    if !(0.0..=1.0).contains(&psi) {
        return Err(invalid(format!("truncation must be in [0, 1], got {psi}")));
    }
    let class = resolve_class(&entry.info, req.class)?;
    let seed = req.seed.unwrap_or_else(fresh_seed);
    let (models, model_id, count) = (app.models.clone(), req.model.clone(), req.count);
    let generated = blocking(move || {
        let (_, pair) = models.gan(&model_id)?;
        engine::sample(pair, count, seed, psi, class)
    })
    .await?;
    let res = entry.info.resolution;
    let items: Vec<(Vec<u8>, Provenance)> = generated
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let prov = Provenance {
                origin: Origin::Sample,
                model: Some(req.model.clone()),
                seed: Some(seed),
                truncation: Some(psi),
                class: g.class,
                parent: None,
                between: None,
                t: None,
                latent: Some(g.latent),
                index: i,
                width: res,
                height: res,
            };
            (g.png, prov)
        })
        .collect();
    let images = store_all(&app, items)?;
    Ok(Json(ImagesResponse {
        images,
        seed: Some(seed),
        warning: None,
    }))
}

fn store_all(app: &AppState, items: Vec<(Vec<u8>, Provenance)>) -> Result<Vec<ImageRef>, ApiError> {
    let provs: Vec<Provenance> = items.iter().map(|(_, p)| p.clone()).collect();
    let ids = app.store().insert_all(items)?;
    Ok(ids.into_iter().zip(provs).map(|(id, p)| image_ref(id, p)).collect())
}

// ------------------------------------------------------------------ colorize

#[derive(Debug, Serialize, Deserialize)]
pub struct ColorizeRequest {
    pub translator: String,
    /// Stored silhouette id.
    pub silhouette: Option<String>,
    /// Base64-encoded PNG, used instead of a stored id.
    pub upload: Option<String>,
    pub variants: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ColorizeResponse {
    pub parent: String,
    pub images: Vec<ImageRef>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

async fn colorize(State(app): State<AppState>, body: Result<Json<ColorizeRequest>, JsonRejection>) -> ApiResult<ColorizeResponse> {
    let Json(req) = body?;
    let (entry, _) = app.models.translator(&req.translator)?;
    let n = req.variants.unwrap_or(DEFAULT_VARIANTS);
    if !(1..=MAX_VARIANTS).contains(&n) {
        return Err(invalid(format!("variants must be in 1..={MAX_VARIANTS}, got {n}")));
    }
    let png = match (&req.silhouette, &req.upload) {
        (Some(id), None) => app.store().png(id)?,
        (None, Some(b64)) => base64::engine::general_purpose::STANDARD
            .decode(b64.trim())
            .map_err(|e| invalid(format!("upload is not valid base64: {e}")))?,
        _ => return Err(invalid("give exactly one of `silhouette` or `upload`")),
    };
    let res = entry.info.resolution;
    let seed = req.seed.unwrap_or_else(fresh_seed);
    let (models, id) = (app.models.clone(), req.translator.clone());
    let upload_png = req.upload.is_some().then(|| png.clone());
    let (variants, warning, dims) = blocking(move || {
        let (_, pair) = models.translator(&id)?;
        let (sil, warning) = engine::prepare_silhouette(&png, res)?;
        let decoded = sgan_core::dataio::decode_png_bytes(&png).map_err(StudioError::Invalid)?;
        let dims = (decoded.shape()[2], decoded.shape()[1]);
        Ok((engine::colorize(pair, &sil, seed, n)?, warning, dims))
    })
    .await?;

    let parent = match (req.silhouette, upload_png) {
        (Some(id), _) => id,
        (None, Some(bytes)) => {
            let prov = Provenance {
                origin: Origin::Upload,
                model: None,
                seed: None,
                truncation: None,
                class: None,
                parent: None,
                between: None,
                t: None,
                latent: None,
                index: 0,
                width: dims.0,
                height: dims.1,
            };
            app.store().insert_all(vec![(bytes, prov)])?.remove(0)
        }
        (None, None) => unreachable!("checked above"),
    };
    let items = variants
        .into_iter()
        .enumerate()
        .map(|(i, png)| {
            let prov = Provenance {
                origin: Origin::Colorize,
                model: Some(req.translator.clone()),
                seed: Some(seed),
                truncation: None,
                class: None,
                parent: Some(parent.clone()),
                between: None,
                t: None,
                latent: None,
                index: i,
                width: res,
                height: res,
            };
            (png, prov)
        })
        .collect();
    let images = store_all(&app, items)?;
    Ok(Json(ColorizeResponse {
        parent,
        images,
        seed,
        warning,
    }))
}

// ------------------------------------------------------------------ interpolate

#[derive(Debug, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub model: String,
    pub from: String,
    pub to: String,
    pub steps: usize,
}

async fn interpolate(State(app): State<AppState>, body: Result<Json<InterpolateRequest>, JsonRejection>) -> ApiResult<ImagesResponse> {
    let Json(req) = body?;
    let (entry, _) = app.models.gan(&req.model)?;
    if !(2..=MAX_FRAMES).contains(&req.steps) {
        return Err(invalid(format!("steps must be in 2..={MAX_FRAMES}, got {}", req.steps)));
    }
    let (a, b) = {
        let store = app.store();
        (store.provenance(&req.from)?.clone(), store.provenance(&req.to)?.clone())
    };
    for (id, p) in [(&req.from, &a), (&req.to, &b)] {
        if p.latent.is_none() {
            return Err(invalid(format!("image `{id}` has no stored latent")));
        }
        if p.model.as_deref() != Some(req.model.as_str()) {
            return Err(invalid(format!("image `{id}` was not generated by `{}`", req.model)));
        }
    }
    if a.class != b.class {
        return Err(invalid("endpoints belong to different classes"));
    }
    let (za, zb) = (a.latent.clone().unwrap_or_default(), b.latent.clone().unwrap_or_default());
    let ts = engine::steps(req.steps);
    let inner: Vec<f64> = ts[1..ts.len() - 1].to_vec();
    let (models, id, class) = (app.models.clone(), req.model.clone(), a.class);
    let frames = blocking(move || {
        let (_, pair) = models.gan(&id)?;
        inner
            .into_iter()
            .map(|t| {
                let z = engine::lerp(&za, &zb, t);
                let png = engine::render_latent(pair, &z, class)?;
                Ok((t, z, png))
            })
            .collect::<Result<Vec<_>, StudioError>>()
    })
    .await?;
    let res = entry.info.resolution;
    let items = frames
        .into_iter()
        .enumerate()
        .map(|(i, (t, z, png))| {
            let prov = Provenance {
                origin: Origin::Interpolate,
                model: Some(req.model.clone()),
                seed: None,
                truncation: None,
                class,
                parent: None,
                between: Some((req.from.clone(), req.to.clone())),
                t: Some(t),
                latent: Some(z),
                index: i + 1,
                width: res,
                height: res,
            };
            (png, prov)
        })
        .collect();
    let middle = store_all(&app, items)?;
    // the endpoints are the source images themselves
    let mut images = Vec::with_capacity(req.steps);
    images.push(image_ref(req.from.clone(), a));
    images.extend(middle);
    images.push(image_ref(req.to.clone(), b));
    Ok(Json(ImagesResponse {
        images,
        seed: None,
        warning: None,
    }))
}

// ------------------------------------------------------------------ board

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Board {
    pub items: Vec<BoardItem>,
}

async fn get_board(State(app): State<AppState>) -> Json<Board> {
    Json(Board {
        items: app.store().board().to_vec(),
    })
}

async fn put_board(State(app): State<AppState>, body: Result<Json<Board>, JsonRejection>) -> ApiResult<Board> {
    let Json(board) = body?;
    let mut store = app.store();
    store.set_board(board.items)?;
    Ok(Json(Board {
        items: store.board().to_vec(),
    }))
}

// ------------------------------------------------------------------ images

async fn image_png(State(app): State<AppState>, Path(file): Path<String>) -> Result<Response, ApiError> {
    let id = file
        .strip_suffix(".png")
        .ok_or_else(|| ApiError::from(StudioError::NotFound(format!("no image `{file}`"))))?;
    let bytes = app.store().png(id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn image_info(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<ImageRef> {
    let prov = app.store().provenance(&id)?.clone();
    Ok(Json(image_ref(id, prov)))
}

async fn fallback() -> ApiError {
    StudioError::NotFound("no such route".into()).into()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/models", get(list_models))
        .route("/api/sample", post(sample))
        .route("/api/colorize", post(colorize))
        .route("/api/interpolate", post(interpolate))
        .route("/api/board", get(get_board).put(put_board))
        .route("/api/images/{id}", get(image_info))
        .route("/images/{file}", get(image_png))
        .fallback(fallback)
        .with_state(state)
}
