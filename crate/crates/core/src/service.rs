//! HTTP/JSON service: sessions, plans, rounds, artifacts and benchmark runs.
//!
//! Routes:
//!
//! | method | path                    | body                           | response            |
//! |--------|-------------------------|--------------------------------|---------------------|
//! | POST   | `/sessions`             | multipart `image`, raw PNG, or `{"image_base64"}` | 201 `{session_id, source}` |
//! | GET    | `/sessions`             |                                | session ids         |
//! | GET    | `/sessions/{id}`        |                                | session + rounds    |
//! | POST   | `/sessions/{id}/plan`   | `{instruction}`                | stored plan         |
//! | POST   | `/sessions/{id}/rounds` | `{plan_ref, overrides?, w?, blur_radius?, seed?, steps?, guidance_scale?, mode?, async?}` | round (or 202 job) |
//! | GET    | `/jobs/{id}`            |                                | job status          |
//! | GET    | `/artifacts/{ref}`      |                                | PNG bytes           |
//! | POST   | `/bench/run`            | `{manifest_path, seed?, jobs?, blend?, clip_stub?}` | report |
//!
//! Every non-2xx response body is a single [`ApiError`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path as UrlPath, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::branch::InjectionMode;
use crate::conductor::{EditRound, EditSession, ModelBundle, Overrides, RoundParams, RoundStatus, SessionStore};
use crate::error::{ApiError, Error, ErrorCode, Result, Stage};
use crate::evaluation::{run_benchmark, BenchBackends, BenchConfig, BenchReport, BenchmarkManifest, BundleInpainter, TokenEmbeddingBackend};
use crate::image::Image;
use crate::instructor::{resolve_mask_ref, EditInstruction, Instructor, PlanRecord, DATA_URL_PREFIX};
use crate::mask::Mask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub store: PathBuf,
    /// Trained bundle directory; a seeded untrained bundle when absent.
    pub ckpt: Option<PathBuf>,
    pub model_seed: u64,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
    pub round_defaults: RoundParams,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            store: PathBuf::from("brushedit-store"),
            ckpt: None,
            model_seed: 0,
            cors_origins: Vec::new(),
            round_defaults: RoundParams::default(),
        }
    }
}

impl ServiceConfig {
    /// File (if any), then `BRUSHEDIT_HOST`, `_PORT`, `_STORE`, `_CKPT` and
    /// `_CORS_ORIGINS` (comma separated) overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::load(p, e))?;
                serde_json::from_slice(&bytes).map_err(|e| Error::load(p, e))?
            }
            None => Self::default(),
        };
        if let Ok(v) = std::env::var("BRUSHEDIT_HOST") {
            cfg.host = v;
        }
        if let Ok(v) = std::env::var("BRUSHEDIT_PORT") {
            cfg.port = v
                .parse()
                .map_err(|_| Error::Config(format!("BRUSHEDIT_PORT is not a port: {v}")))?;
        }
        if let Ok(v) = std::env::var("BRUSHEDIT_STORE") {
            cfg.store = v.into();
        }
        if let Ok(v) = std::env::var("BRUSHEDIT_CKPT") {
            cfg.ckpt = Some(v.into());
        }
        if let Ok(v) = std::env::var("BRUSHEDIT_CORS_ORIGINS") {
            cfg.cors_origins = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        }
        Ok(cfg)
    }

    pub fn cors(&self) -> Result<CorsLayer> {
        let base = CorsLayer::new().allow_methods(Any).allow_headers(Any);
        if self.cors_origins.is_empty() {
            return Ok(base.allow_origin(Any));
        }
        let origins = self
            .cors_origins
            .iter()
            .map(|o| HeaderValue::from_str(o).map_err(|_| Error::Config(format!("bad CORS origin {o:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(base.allow_origin(AllowOrigin::list(origins)))
    }
}

/// Load the configured bundle, or an untrained one with a warning.
pub fn load_bundle(ckpt: Option<&Path>, seed: u64) -> Result<ModelBundle> {
    match ckpt {
        Some(dir) => ModelBundle::load(dir),
        None => {
            log::warn!("no checkpoint given; using an untrained bundle (seed {seed})");
            ModelBundle::untrained(Default::default(), seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done { round: Box<EditRound> },
    Failed { error: ApiError },
}

pub struct AppState {
    pub store: SessionStore,
    pub bundle: ModelBundle,
    pub instructor: Instructor,
    pub round_defaults: RoundParams,
    jobs: Mutex<HashMap<String, JobState>>,
}

impl AppState {
    pub fn new(store: SessionStore, bundle: ModelBundle, instructor: Instructor, round_defaults: RoundParams) -> Self {
        Self {
            store,
            bundle,
            instructor,
            round_defaults,
            jobs: Mutex::new(HashMap::new()),
        }
    }
}

type Shared = Arc<AppState>;

struct Failure(ApiError);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ApiError::from(&e))
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure(e)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

type Reply<T> = std::result::Result<T, Failure>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Reply<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(Failure::from),
        Err(e) => Err(Failure(ApiError::new(ErrorCode::ModelError, format!("worker failed: {e}")))),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Reply<T> {
    serde_json::from_slice(body).map_err(|e| Failure(ApiError::new(ErrorCode::Validation, format!("invalid request body: {e}"))))
}

fn decode_b64(s: &str, what: &str) -> Reply<Vec<u8>> {
    let s = s.strip_prefix(DATA_URL_PREFIX).unwrap_or(s);
    base64::engine::general_purpose::STANDARD
        .decode(s.trim())
        .map_err(|e| Failure(ApiError::new(ErrorCode::Validation, format!("{what} is not valid base64: {e}"))))
}

fn decode_image(bytes: &[u8]) -> Reply<Image> {
    Image::decode_png(bytes).map_err(|e| Failure(ApiError::new(ErrorCode::Validation, format!("image could not be decoded: {e}"))))
}

#[derive(Deserialize)]
struct CreateBody {
    image_base64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub source: String,
}

async fn create_session(State(st): State<Shared>, req: Request) -> Reply<(StatusCode, Json<Created>)> {
    let ctype = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let bytes = if ctype.starts_with("multipart/form-data") {
        let mut mp = Multipart::from_request(req, &())
            .await
            .map_err(|e| Failure(ApiError::new(ErrorCode::Validation, e.body_text())))?;
        let mut found = None;
        while let Some(field) = mp
            .next_field()
            .await
            .map_err(|e| Failure(ApiError::new(ErrorCode::Validation, e.body_text())))?
        {
            if field.name() == Some("image") {
                found = Some(
                    field
                        .bytes()
                        .await
                        .map_err(|e| Failure(ApiError::new(ErrorCode::Validation, e.body_text())))?,
                );
                break;
            }
        }
        found
            .ok_or_else(|| Failure(ApiError::new(ErrorCode::Validation, "multipart body has no `image` field")))?
            .to_vec()
    } else {
        let body = Bytes::from_request(req, &())
            .await
            .map_err(|e| Failure(ApiError::new(ErrorCode::Validation, e.body_text())))?;
        if ctype.starts_with("application/json") {
            let b: CreateBody = parse_json(&body)?;
            decode_b64(&b.image_base64, "image_base64")?
        } else {
            body.to_vec()
        }
    };
    let image = decode_image(&bytes)?;
    let session = blocking(move || st.store.create(&image)).await?;
    Ok((
        StatusCode::CREATED,
        Json(Created {
            session_id: session.id,
            source: session.source,
        }),
    ))
}

async fn list_sessions(State(st): State<Shared>) -> Reply<Json<Vec<String>>> {
    let ids = blocking(move || Ok(st.store.list()?.into_iter().map(|s| s.id).collect())).await?;
    Ok(Json(ids))
}

async fn get_session(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> Reply<Json<EditSession>> {
    Ok(Json(blocking(move || st.store.get(&id)).await?))
}

#[derive(Deserialize)]
struct PlanBody {
    instruction: String,
}

/// A stored plan as returned by the plan endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    pub plan_id: String,
    pub instruction: String,
    #[serde(flatten)]
    pub plan: PlanRecord,
}

async fn make_plan(State(st): State<Shared>, UrlPath(id): UrlPath<String>, body: Bytes) -> Reply<Json<PlanResponse>> {
    let b: PlanBody = parse_json(&body)?;
    let ins = EditInstruction::new(&b.instruction)?;
    let resp = blocking(move || {
        let session = st.store.get(&id)?;
        let current = st.store.current_image(&session)?;
        let plan = st.instructor.build_plan(&ins, &current)?;
        let stored = st.store.add_plan(&id, &plan, Some(ins.text()))?;
        Ok(PlanResponse {
            plan_id: stored.plan_id,
            instruction: ins.text().to_string(),
            plan: stored.plan,
        })
    })
    .await?;
    Ok(Json(resp))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverridesBody {
    /// Artifact name or `data:image/png;base64,` URL.
    mask_ref: Option<String>,
    mask_png_base64: Option<String>,
    caption: Option<String>,
    w: Option<f64>,
    blur_radius: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoundBody {
    plan_ref: String,
    #[serde(default)]
    overrides: Option<OverridesBody>,
    w: Option<f64>,
    blur_radius: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
    guidance_scale: Option<f64>,
    mode: Option<InjectionMode>,
    #[serde(default, rename = "async")]
    run_async: bool,
}

fn override_mask(store: &SessionStore, o: &OverridesBody) -> Result<Option<Mask>> {
    if let Some(b64) = &o.mask_png_base64 {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64.trim())
            .map_err(|e| Error::Validation(format!("mask_png_base64 is not valid base64: {e}")))?;
        return Mask::decode_png(&bytes)
            .map(Some)
            .map_err(|e| Error::Validation(format!("override mask: {e}")));
    }
    match &o.mask_ref {
        Some(r) if r.starts_with(DATA_URL_PREFIX) => resolve_mask_ref(r, None)
            .map(Some)
            .map_err(|e| Error::Validation(format!("override mask: {e}"))),
        Some(r) => store.load_mask(r).map(Some),
        None => Ok(None),
    }
}

fn execute_round(st: &AppState, id: &str, b: RoundBody) -> Result<EditRound> {
    let plan = st.store.plan(id, &b.plan_ref)?;
    let o = b.overrides.unwrap_or_default();
    let overrides = Overrides {
        mask: override_mask(&st.store, &o)?,
        caption: o.caption,
        w: o.w.or(b.w),
        blur_radius: o.blur_radius.or(b.blur_radius),
    };
    let d = st.round_defaults;
    let params = RoundParams {
        seed: b.seed.unwrap_or(d.seed),
        steps: b.steps.unwrap_or(d.steps),
        guidance_scale: b.guidance_scale.unwrap_or(d.guidance_scale),
        mode: b.mode.unwrap_or(d.mode),
        ..d
    };
    let round = st
        .store
        .run_round(id, &st.bundle, &plan, Some(&b.plan_ref), &overrides, &params)?;
    if round.status == RoundStatus::Failed {
        return Err(Error::Model(format!(
            "round {} failed: {}",
            round.index,
            round.error.as_deref().unwrap_or("unknown error")
        ))
        .at_stage(Stage::Inpaint));
    }
    Ok(round)
}

async fn run_round(State(st): State<Shared>, UrlPath(id): UrlPath<String>, body: Bytes) -> Reply<Response> {
    let b: RoundBody = parse_json(&body)?;
    if !b.run_async {
        let round = blocking(move || execute_round(&st, &id, b)).await?;
        return Ok(Json(round).into_response());
    }
    // fail fast on unknown sessions and plans before accepting the job
    {
        let (st, id, plan_ref) = (st.clone(), id.clone(), b.plan_ref.clone());
        blocking(move || st.store.plan(&id, &plan_ref).map(|_| ())).await?;
    }
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    st.jobs.lock().expect("jobs lock").insert(job_id.clone(), JobState::Running);
    let (st2, jid) = (st.clone(), job_id.clone());
    tokio::spawn(async move {
        let st3 = st2.clone();
        let state = match tokio::task::spawn_blocking(move || execute_round(&st3, &id, b)).await {
            Ok(Ok(round)) => JobState::Done { round: Box::new(round) },
            Ok(Err(e)) => JobState::Failed { error: ApiError::from(&e) },
            Err(e) => JobState::Failed {
                error: ApiError::new(ErrorCode::ModelError, format!("worker failed: {e}")),
            },
        };
        st2.jobs.lock().expect("jobs lock").insert(jid, state);
    });
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "job_id": job_id }))).into_response())
}

async fn get_job(State(st): State<Shared>, UrlPath(id): UrlPath<String>) -> Reply<Json<JobState>> {
    st.jobs
        .lock()
        .expect("jobs lock")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| Failure(ApiError::new(ErrorCode::NotFound, format!("job {id:?}"))))
}

async fn get_artifact(State(st): State<Shared>, UrlPath(name): UrlPath<String>) -> Reply<Response> {
    let bytes = blocking(move || st.store.read_artifact(&name)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchBody {
    manifest_path: PathBuf,
    seed: Option<u64>,
    jobs: Option<usize>,
    #[serde(default)]
    blend: bool,
    #[serde(default)]
    clip_stub: bool,
}

async fn bench_run(State(st): State<Shared>, body: Bytes) -> Reply<Json<BenchReport>> {
    let b: BenchBody = parse_json(&body)?;
    let report = blocking(move || {
        let manifest = BenchmarkManifest::load(&b.manifest_path)?;
        let inpainter = BundleInpainter {
            bundle: &st.bundle,
            params: st.round_defaults,
            blend: b.blend,
        };
        let stub = TokenEmbeddingBackend::default();
        let backends = BenchBackends {
            perceptual: None,
            embedding: b.clip_stub.then_some(&stub as _),
        };
        let cfg = BenchConfig {
            seed: b.seed.unwrap_or(st.round_defaults.seed),
            jobs: b.jobs.unwrap_or(1),
        };
        Ok(run_benchmark(&manifest, &inpainter, &backends, &cfg))
    })
    .await?;
    Ok(Json(report))
}

async fn health() -> &'static str {
    "ok"
}

async fn fallback() -> Failure {
    Failure(ApiError::new(ErrorCode::NotFound, "no such route"))
}

pub fn router(state: Arc<AppState>, cors: CorsLayer) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/plan", post(make_plan))
        .route("/sessions/{id}/rounds", post(run_round))
        .route("/jobs/{id}", get(get_job))
        .route("/artifacts/{name}", get(get_artifact))
        .route("/bench/run", post(bench_run))
        .fallback(fallback)
        .layer(cors)
        .with_state(state)
}

/// Build state from config and serve until the process is stopped.
pub async fn serve(cfg: ServiceConfig, instructor: Instructor) -> Result<()> {
    let (ckpt, seed) = (cfg.ckpt.clone(), cfg.model_seed);
    let bundle = tokio::task::spawn_blocking(move || load_bundle(ckpt.as_deref(), seed))
        .await
        .map_err(|e| Error::Model(format!("bundle loader failed: {e}")))??;
    let store = SessionStore::open(&cfg.store)?;
    let state = Arc::new(AppState::new(store, bundle, instructor, cfg.round_defaults));
    let addr: SocketAddr = format!("{}:{}", cfg.host, cfg.port)
        .parse()
        .map_err(|e| Error::Config(format!("bad listen address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(state, cfg.cors()?)).await?;
    Ok(())
}
