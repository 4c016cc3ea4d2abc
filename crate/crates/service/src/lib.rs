//! Local HTTP/JSON service for stepwise morphogenesis.
//!
//! Each session holds the full history of committed designs and a cursor,
//! so undo and redo are exact. Requests on one session are serialized;
//! sessions are independent of each other. Every error body has the shape
//! `{ "code", "message", "detail" }`.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | POST | `/sessions` | empty, `{"script": ...}`, `{"script_text": "..."}` or `{"structure": ...}` |
//! | GET | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/seed` | cell spec |
//! | POST | `/sessions/{id}/adhere` | cell input |
//! | POST | `/sessions/{id}/fuse` | `{"members": [[i, j], ...]}` |
//! | POST | `/sessions/{id}/preview` | any step, tagged with `"op"` |
//! | GET | `/sessions/{id}/placement-surface` | `?fuse=2-4,3-5&fix=5&count=64&seed=1` |
//! | POST | `/sessions/{id}/place` | `{"node": 6, "at": [x, y, z], "constraint": {...}}` |
//! | POST | `/sessions/{id}/undo`, `/redo` | |
//! | GET | `/sessions/{id}/export` | `?format=structure|json|obj|script` |

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cellmorph::engine::{run_script, CellInput, EngineConfig, MorphoScript, MorphoStep, Run, StepLog};
use cellmorph::io::{self, StructureFile};
use cellmorph::placement::{placement_for, sample_surface, PlacementConstraint, PlacementRequest, Region};
use cellmorph::structure::{count_report, CountReport};
use cellmorph::{CellSpec, Member, MemberRole, MorphoError, NodeId, Point3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Structured error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<MorphoError> for ApiError {
    fn from(e: MorphoError) -> Self {
        let root = e.root();
        let status = match root {
            MorphoError::Usage(_) | MorphoError::Parse { .. } => StatusCode::BAD_REQUEST,
            MorphoError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let mut detail = serde_json::Map::new();
        if let MorphoError::Step { index, .. } | MorphoError::Expectation { index, .. } = &e {
            detail.insert("step".into(), json!(index));
        }
        match root {
            MorphoError::Parse { line, .. } => {
                detail.insert("line".into(), json!(line));
            }
            MorphoError::PlacementRejected { residual, tolerance } => {
                detail.insert("residual".into(), json!(residual));
                detail.insert("tolerance".into(), json!(tolerance));
            }
            MorphoError::MechanismRisk { shared } => {
                detail.insert("shared".into(), json!(shared));
            }
            MorphoError::IncompleteBasis { needed, found, evaluated, .. } => {
                detail.insert("needed".into(), json!(needed));
                detail.insert("found".into(), json!(found));
                detail.insert("evaluated".into(), json!(evaluated));
            }
            MorphoError::CannotFuse(m) | MorphoError::UnknownMember(m) => {
                detail.insert("member".into(), json!(m));
            }
            MorphoError::UnknownNode(n) => {
                detail.insert("node".into(), json!(n));
            }
            _ => {}
        }
        ApiError {
            status: status.as_u16(),
            code: e.code().to_string(),
            message: e.to_string(),
            detail: if detail.is_empty() { Value::Null } else { Value::Object(detail) },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        let mut err = ApiError::bad_request(format!("invalid request body: {e}"));
        err.detail = json!({ "line": e.line(), "column": e.column() });
        err
    })
}

/// One design session.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    /// `history[0]` is the starting point; `history[cursor]` is current.
    history: Vec<Run>,
    cursor: usize,
    /// Set by the last placement-surface request; `place` checks against it
    /// when the request carries no constraint of its own.
    active: Option<PlacementRequest>,
    rank_tol: f64,
}

impl Session {
    fn new(id: String, start: Run, rank_tol: f64) -> Self {
        Session {
            id,
            history: vec![start],
            cursor: 0,
            active: None,
            rank_tol,
        }
    }

    pub fn current(&self) -> &Run {
        &self.history[self.cursor]
    }

    fn commit(&mut self, step: MorphoStep, cfg: &EngineConfig) -> ApiResult<StepLog> {
        let mut next = self.current().clone();
        let log = next.apply(step, cfg)?.clone();
        self.history.truncate(self.cursor + 1);
        self.history.push(next);
        self.cursor += 1;
        self.active = None;
        Ok(log)
    }

    fn view(&self) -> ApiResult<SessionView> {
        let run = self.current();
        Ok(SessionView {
            session: self.id.clone(),
            cursor: self.cursor,
            history: self.history.len() - 1,
            can_undo: self.cursor > 0,
            can_redo: self.cursor + 1 < self.history.len(),
            dim_w: run.design.state.dim_w(),
            counts: count_report(&run.design.state, self.rank_tol).ok(),
            structure: StructureFile::from_design(&run.design),
            log: run.log.clone(),
        })
    }
}

/// Snapshot returned by state queries and every committed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session: String,
    pub cursor: usize,
    pub history: usize,
    pub can_undo: bool,
    pub can_redo: bool,
    pub dim_w: usize,
    pub counts: Option<CountReport>,
    pub structure: StructureFile,
    pub log: Vec<StepLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub log: StepLog,
    pub state: SessionView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub log: StepLog,
    pub dim_w: usize,
    pub counts: Option<CountReport>,
    pub struts: usize,
    pub cables: usize,
    pub structure: StructureFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceResponse {
    pub cell: cellmorph::CellId,
    pub free_node: NodeId,
    pub current: Point3,
    pub constraints: Vec<PlacementConstraint>,
    /// Monomial coefficients for each quadric constraint, in the order
    /// `1, x, y, z, x², y², z², xy, xz, yz`.
    pub polynomials: Vec<Option<[f64; 10]>>,
    pub target_edges: Vec<Member>,
    pub target_densities: Vec<f64>,
    pub samples: Vec<Point3>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    script: Option<MorphoScript>,
    script_text: Option<String>,
    structure: Option<StructureFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FuseRequest {
    members: Vec<Member>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaceRequest {
    node: NodeId,
    at: Point3,
    #[serde(default)]
    constraint: Option<PlacementRequest>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceQuery {
    fuse: String,
    fix: Option<u32>,
    count: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    format: Option<String>,
}

/// Shared service state.
pub struct AppState {
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    next: AtomicU64,
    pub cfg: EngineConfig,
}

impl AppState {
    pub fn new(cfg: EngineConfig) -> Arc<Self> {
        Arc::new(AppState {
            sessions: RwLock::new(BTreeMap::new()),
            next: AtomicU64::new(1),
            cfg,
        })
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn insert(&self, start: Run) -> String {
        let id = format!("s{}", self.next.fetch_add(1, Ordering::Relaxed));
        let session = Session::new(id.clone(), start, self.cfg.rank_tol);
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        id
    }
}

/// Runs `f` on the locked session off the async workers.
async fn with_session<T, F>(state: &Arc<AppState>, id: &str, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session, &EngineConfig) -> ApiResult<T> + Send + 'static,
{
    let session = state.session(id)?;
    let cfg = state.cfg;
    tokio::task::spawn_blocking(move || {
        let mut guard = session.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard, &cfg)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn create(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        parse_body(&body)?
    };
    let given = [req.script.is_some(), req.script_text.is_some(), req.structure.is_some()];
    if given.iter().filter(|g| **g).count() > 1 {
        return Err(ApiError::bad_request("give at most one of `script`, `script_text`, `structure`"));
    }
    let cfg = state.cfg;
    let start = tokio::task::spawn_blocking(move || -> ApiResult<Run> {
        let script = match req.script_text {
            Some(text) => Some(io::parse_script(&text)?),
            None => req.script,
        };
        if let Some(script) = script {
            return run_script(&script, &cfg).map_err(|f| ApiError::from(f.error));
        }
        if let Some(file) = req.structure {
            return Ok(Run::resume(file.into_design()?));
        }
        Ok(Run::new())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let id = state.insert(start);
    let view = with_session(&state, &id, |s, _| s.view()).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    with_session(&state, &id, |s, _| s.view()).await.map(Json)
}

async fn commit(state: Arc<AppState>, id: String, step: MorphoStep) -> ApiResult<Json<StepResponse>> {
    with_session(&state, &id, move |s, cfg| {
        let log = s.commit(step, cfg)?;
        Ok(StepResponse { log, state: s.view()? })
    })
    .await
    .map(Json)
}

async fn seed(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<StepResponse>> {
    let spec: CellSpec = parse_body(&body)?;
    commit(state, id, MorphoStep::Seed(spec)).await
}

async fn adhere(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<StepResponse>> {
    let input: CellInput = parse_body(&body)?;
    commit(state, id, MorphoStep::Adhere(input)).await
}

async fn fuse(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<StepResponse>> {
    let req: FuseRequest = parse_body(&body)?;
    commit(state, id, MorphoStep::Fuse { members: req.members }).await
}

async fn place(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<StepResponse>> {
    let req: PlaceRequest = parse_body(&body)?;
    with_session(&state, &id, move |s, cfg| {
        let constraint = req.constraint.or_else(|| s.active.clone());
        let log = s.commit(
            MorphoStep::Place {
                node: req.node,
                at: req.at,
                constraint,
            },
            cfg,
        )?;
        Ok(StepResponse { log, state: s.view()? })
    })
    .await
    .map(Json)
}

async fn preview(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<PreviewResponse>> {
    let step: MorphoStep = parse_body(&body)?;
    with_session(&state, &id, move |s, cfg| {
        let (design, log, _) = s.current().preview(&step, cfg)?;
        let role = |r: MemberRole| design.state.typology().iter().filter(|t| **t == r).count();
        let counts = count_report(&design.state, cfg.rank_tol).ok();
        Ok(PreviewResponse {
            dim_w: design.state.dim_w(),
            counts,
            struts: role(MemberRole::Strut),
            cables: role(MemberRole::Cable),
            structure: StructureFile::from_design(&design),
            log,
        })
    })
    .await
    .map(Json)
}

/// `2-4,3-5` style member lists.
fn parse_members(text: &str) -> ApiResult<Vec<Member>> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<Member>().map_err(|e| ApiError::bad_request(format!("member `{p}`: {e}"))))
        .collect()
}

async fn surface(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SurfaceQuery>,
) -> ApiResult<Json<SurfaceResponse>> {
    let req = PlacementRequest {
        remove: parse_members(&q.fuse)?,
        fixed: q.fix.map(NodeId),
    };
    let count = q.count.unwrap_or(64);
    if count == 0 || count > 100_000 {
        return Err(ApiError::bad_request("count must be between 1 and 100000"));
    }
    let seed = q.seed.unwrap_or(0);
    with_session(&state, &id, move |s, cfg| {
        let design = &s.current().design;
        let placement = placement_for(design, &req)?;
        let pts: Vec<Point3> = design.state.nodes().values().copied().collect();
        let region = Region::around(&pts, 0.5 * design.state.diameter());
        let samples = match placement.constraints.as_slice() {
            [one] => sample_surface(one, count, &region, seed, cfg.execution)?,
            _ => Vec::new(),
        };
        s.active = Some(req);
        Ok(SurfaceResponse {
            cell: placement.cell,
            free_node: placement.free_node,
            current: placement.current,
            polynomials: placement.constraints.iter().map(|c| c.quadric_polynomial()).collect(),
            constraints: placement.constraints,
            target_edges: placement.target.edges,
            target_densities: placement.target.densities,
            samples,
        })
    })
    .await
    .map(Json)
}

async fn undo(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    with_session(&state, &id, |s, _| {
        if s.cursor == 0 {
            return Err(ApiError::new(StatusCode::CONFLICT, "nothing_to_undo", "already at the first state"));
        }
        s.cursor -= 1;
        s.active = None;
        s.view()
    })
    .await
    .map(Json)
}

async fn redo(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    with_session(&state, &id, |s, _| {
        if s.cursor + 1 >= s.history.len() {
            return Err(ApiError::new(StatusCode::CONFLICT, "nothing_to_redo", "already at the latest state"));
        }
        s.cursor += 1;
        s.active = None;
        s.view()
    })
    .await
    .map(Json)
}

async fn export(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let format = q.format.unwrap_or_else(|| "structure".into());
    with_session(&state, &id, move |s, _| {
        let run = s.current();
        let (body, mime) = match format.as_str() {
            "structure" => (io::structure_to_string(&run.design)?, "application/toml"),
            "json" => (
                serde_json::to_string_pretty(&StructureFile::from_design(&run.design))
                    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?,
                "application/json",
            ),
            "obj" => (io::to_obj(&run.design.state)?, "text/plain"),
            "script" => {
                if run.steps.is_empty() && !run.design.state.nodes().is_empty() {
                    return Err(ApiError::bad_request("this session started from a structure and has no script"));
                }
                let script = MorphoScript {
                    name: Some(s.id.clone()),
                    steps: run.steps.iter().cloned().map(Into::into).collect(),
                };
                (io::script_to_string(&script)?, "application/toml")
            }
            other => return Err(ApiError::bad_request(format!("unknown export format `{other}`"))),
        };
        Ok(([(header::CONTENT_TYPE, mime)], body).into_response())
    })
    .await
}

/// The API routes.
pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(get_state))
        .route("/sessions/{id}/seed", post(seed))
        .route("/sessions/{id}/adhere", post(adhere))
        .route("/sessions/{id}/fuse", post(fuse))
        .route("/sessions/{id}/preview", post(preview))
        .route("/sessions/{id}/placement-surface", get(surface))
        .route("/sessions/{id}/place", post(place))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/redo", post(redo))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

/// The API plus static files (the built workbench) for every other path.
pub fn router_with_assets(state: Arc<AppState>, assets: PathBuf) -> Router {
    router(state).fallback_service(tower_http::services::ServeDir::new(assets))
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>, assets: Option<PathBuf>) -> std::io::Result<()> {
    let app = match assets {
        Some(dir) => router_with_assets(state, dir),
        None => router(state),
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
