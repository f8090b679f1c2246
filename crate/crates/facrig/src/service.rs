//! REST service for interactive expression editing.
//!
//! Every session holds one identity mesh, the current expression code and an
//! undo stack of earlier codes. Mesh payloads are binary PLY; everything else
//! is JSON.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use facrig_core::io::{ply::write_ply, read_mesh_bytes};
use facrig_core::rig::{standardize, StandardizeSpec};
use facrig_core::TriangleMesh;
use facrig_model::model::{IdentityCode, PreparedIdentity};
use facrig_model::Model;
use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

pub const CODE_VERSION_HEADER: &str = "x-code-version";
const MAX_UPLOAD: usize = 256 << 20;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub diagnostics: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            diagnostics: Vec::new(),
        }
    }

    fn not_found(id: Uuid) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }

    fn invalid(message: impl Into<String>, diagnostics: Vec<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message: message.into(),
            diagnostics,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.diagnostics.is_empty() {
            body["diagnostics"] = json!(self.diagnostics);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// An identity mesh with its encoder and decoder inputs, shared by every
/// session that uploads the same mesh.
pub struct IdentityEntry {
    pub mesh: TriangleMesh<f64>,
    pub prepared: PreparedIdentity<f32>,
    pub code: IdentityCode<f32>,
}

struct Session {
    identity: Arc<IdentityEntry>,
    code: Vec<f64>,
    history: Vec<Vec<f64>>,
    version: u64,
    rendered: Option<(u64, Bytes)>,
}

impl Session {
    fn set_code(&mut self, code: Vec<f64>) {
        let old = std::mem::replace(&mut self.code, code);
        self.history.push(old);
        self.version += 1;
    }
}

pub struct AppState {
    model: Arc<Model>,
    names: Vec<String>,
    sessions: Mutex<HashMap<Uuid, Arc<tokio::sync::Mutex<Session>>>>,
    identities: Mutex<HashMap<u64, Arc<IdentityEntry>>>,
}

impl AppState {
    pub fn new(model: Model) -> Arc<Self> {
        let names = model.config.code_names();
        Arc::new(Self {
            model: Arc::new(model),
            names,
            sessions: Mutex::default(),
            identities: Mutex::default(),
        })
    }

    fn session(&self, id: Uuid) -> ApiResult<Arc<tokio::sync::Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn facs_dims(&self) -> usize {
        self.model.config.facs_dims
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/openapi.json", get(openapi))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/encode", post(encode))
        .route("/sessions/{id}/code", get(get_code).patch(patch_code))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/mesh", get(get_mesh))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

fn parse_mesh(bytes: &[u8]) -> ApiResult<TriangleMesh<f64>> {
    read_mesh_bytes(bytes).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("unreadable mesh: {e}")))
}

/// Removes closed eye and mouth patches; the flag reports whether any were
/// found.
pub fn standardize_upload(mesh: TriangleMesh<f64>) -> Result<(TriangleMesh<f64>, bool), Vec<String>> {
    let mut diagnostics = Vec::new();
    if mesh.vertex_count() < 3 || mesh.triangle_count() == 0 {
        diagnostics.push(format!(
            "mesh has {} vertices and {} triangles",
            mesh.vertex_count(),
            mesh.triangle_count()
        ));
        return Err(diagnostics);
    }
    let spec = StandardizeSpec::canonical(&mesh, 1.0);
    let selected = spec.select(&mesh).map_err(|e| vec![e.to_string()])?;
    if !selected.iter().any(|&s| s) {
        return Ok((mesh, false));
    }
    match standardize(&mesh, &spec) {
        Ok(m) => Ok((m, true)),
        Err(e) => {
            diagnostics.push(format!("standardization failed: {e}"));
            Err(diagnostics)
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: Uuid,
    pub au_names: Vec<String>,
    pub standardized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub vertex_count: usize,
    pub code_dims: usize,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let mesh = parse_mesh(&body)?;
    let (mesh, standardized) = standardize_upload(mesh).map_err(|d| ApiError::invalid("identity mesh failed validation", d))?;
    let key = mesh.content_hash();
    let cached = state.identities.lock().expect("identity cache poisoned").get(&key).cloned();
    let identity = match cached {
        Some(e) => e,
        None => {
            let model = state.model.clone();
            let entry = blocking(move || {
                let prepared = model
                    .prepare_identity(&mesh)
                    .map_err(|e| ApiError::invalid("identity mesh failed validation", vec![e.to_string()]))?;
                let code = model
                    .encode_identity(&prepared.prepared)
                    .map_err(|e| ApiError::invalid("identity mesh failed validation", vec![e.to_string()]))?;
                Ok(Arc::new(IdentityEntry { mesh, prepared, code }))
            })
            .await?;
            state
                .identities
                .lock()
                .expect("identity cache poisoned")
                .entry(key)
                .or_insert(entry)
                .clone()
        }
    };
    let id = Uuid::new_v4();
    let vertex_count = identity.mesh.vertex_count();
    let session = Session {
        identity,
        code: vec![0.0; state.model.config.expression_dim()],
        history: Vec::new(),
        version: 0,
        rendered: None,
    };
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id, Arc::new(tokio::sync::Mutex::new(session)));
    tracing::info!(session = %id, vertex_count, standardized, "session created");
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: id,
            au_names: state.names[..state.facs_dims()].to_vec(),
            standardized,
            warning: standardized.then(|| "closed eye or mouth patches were removed".to_string()),
            vertex_count,
            code_dims: state.model.config.expression_dim(),
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CodeView {
    pub z_facs: Vec<f64>,
    pub z_ext: Vec<f64>,
    pub version: u64,
    pub undo_depth: usize,
}

fn code_view(state: &AppState, s: &Session) -> CodeView {
    let k = state.facs_dims();
    CodeView {
        z_facs: s.code[..k].to_vec(),
        z_ext: s.code[k..].to_vec(),
        version: s.version,
        undo_depth: s.history.len(),
    }
}

async fn encode(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>, body: Bytes) -> ApiResult<Json<CodeView>> {
    let session = state.session(id)?;
    let mesh = read_mesh_bytes::<f64>(&body).map_err(|e| ApiError::invalid("unreadable expression mesh", vec![e.to_string()]))?;
    let model = state.model.clone();
    let code = blocking(move || {
        let prep = model
            .prepare(&mesh)
            .map_err(|e| ApiError::invalid("expression mesh failed validation", vec![e.to_string()]))?;
        let z = model
            .encode_expression(&prep)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok(z.into_iter().map(f64::from).collect::<Vec<_>>())
    })
    .await?;
    let mut s = session.lock().await;
    s.set_code(code);
    Ok(Json(code_view(&state, &s)))
}

async fn get_code(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>) -> ApiResult<Json<CodeView>> {
    let session = state.session(id)?;
    let s = session.lock().await;
    Ok(Json(code_view(&state, &s)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CodeEdit {
    #[serde(default)]
    pub index: Option<usize>,
    #[serde(default)]
    pub name: Option<String>,
    pub value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CodeEdited {
    pub index: usize,
    pub name: String,
    pub value: f64,
    /// The value lies outside `[0, 1]`; it is kept as given.
    pub out_of_range: bool,
    pub code: CodeView,
}

async fn patch_code(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>, Json(edit): Json<CodeEdit>) -> ApiResult<Json<CodeEdited>> {
    let session = state.session(id)?;
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, m);
    let index = match (edit.index, &edit.name) {
        (Some(i), None) if i < state.names.len() => i,
        (Some(i), None) => return Err(bad(format!("index {i} outside [0, {})", state.names.len()))),
        (None, Some(n)) => state
            .names
            .iter()
            .position(|x| x == n)
            .ok_or_else(|| bad(format!("unknown code entry {n:?}")))?,
        _ => return Err(bad("give exactly one of index and name".into())),
    };
    if !edit.value.is_finite() {
        return Err(bad("value must be finite".into()));
    }
    let mut s = session.lock().await;
    let mut code = s.code.clone();
    code[index] = edit.value;
    s.set_code(code);
    Ok(Json(CodeEdited {
        index,
        name: state.names[index].clone(),
        value: edit.value,
        out_of_range: !(0.0..=1.0).contains(&edit.value),
        code: code_view(&state, &s),
    }))
}

async fn undo(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>) -> ApiResult<Json<CodeView>> {
    let session = state.session(id)?;
    let mut s = session.lock().await;
    let Some(prev) = s.history.pop() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "nothing to undo"));
    };
    s.code = prev;
    s.version += 1;
    Ok(Json(code_view(&state, &s)))
}

/// Binary PLY of the identity under `code`. An all-zero code returns the
/// identity vertices unchanged.
pub fn render_mesh(model: &Model, identity: &IdentityEntry, code: &[f64]) -> Result<Vec<u8>, facrig_model::ModelError> {
    if code.iter().all(|&x| x == 0.0) {
        return Ok(write_ply(&identity.mesh, &[]));
    }
    let z: Vec<f32> = code.iter().map(|&x| x as f32).collect();
    let mesh = model.decode(&identity.prepared, &z, &identity.code)?;
    Ok(write_ply(&mesh, &[]))
}

async fn get_mesh(State(state): State<Arc<AppState>>, Path(id): Path<Uuid>) -> ApiResult<Response> {
    let session = state.session(id)?;
    let mut s = session.lock().await;
    let version = s.version;
    let bytes = match &s.rendered {
        Some((v, b)) if *v == version => b.clone(),
        _ => {
            let model = state.model.clone();
            let identity = s.identity.clone();
            let code = s.code.clone();
            let b = blocking(move || {
                render_mesh(&model, &identity, &code).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
            })
            .await?;
            let b = Bytes::from(b);
            s.rendered = Some((version, b.clone()));
            b
        }
    };
    let tag = format!("\"{id}-{version}\"");
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream")),
            (header::ETAG, HeaderValue::from_str(&tag).expect("ascii tag")),
            (
                header::HeaderName::from_static(CODE_VERSION_HEADER),
                HeaderValue::from(version),
            ),
        ],
        bytes,
    )
        .into_response())
}

async fn openapi() -> Json<serde_json::Value> {
    Json(openapi_document())
}

pub fn openapi_document() -> serde_json::Value {
    let mesh_body = json!({
        "required": true,
        "content": { "application/octet-stream": { "schema": { "type": "string", "format": "binary" } } }
    });
    let id_param = json!([{ "name": "id", "in": "path", "required": true, "schema": { "type": "string", "format": "uuid" } }]);
    let code_view = json!({
        "type": "object",
        "properties": {
            "z_facs": { "type": "array", "items": { "type": "number" } },
            "z_ext": { "type": "array", "items": { "type": "number" } },
            "version": { "type": "integer" },
            "undo_depth": { "type": "integer" }
        }
    });
    let err = json!({ "description": "error", "content": { "application/json": { "schema": { "$ref": "#/components/schemas/Error" } } } });
    let code_ok = json!({ "description": "current code", "content": { "application/json": { "schema": { "$ref": "#/components/schemas/CodeView" } } } });
    json!({
        "openapi": "3.0.3",
        "info": { "title": "facrig", "version": env!("CARGO_PKG_VERSION") },
        "paths": {
            "/sessions": { "post": {
                "summary": "Create a session from an identity mesh (PLY or OBJ)",
                "requestBody": mesh_body,
                "responses": {
                    "201": { "description": "session created", "content": { "application/json": { "schema": {
                        "type": "object",
                        "properties": {
                            "session_id": { "type": "string", "format": "uuid" },
                            "au_names": { "type": "array", "items": { "type": "string" } },
                            "standardized": { "type": "boolean" },
                            "warning": { "type": "string" },
                            "vertex_count": { "type": "integer" },
                            "code_dims": { "type": "integer" }
                        }
                    } } } },
                    "400": err, "422": err
                }
            } },
            "/sessions/{id}/encode": { "post": {
                "summary": "Infer the expression code of a mesh and make it current",
                "parameters": id_param, "requestBody": mesh_body,
                "responses": { "200": code_ok, "404": err, "422": err }
            } },
            "/sessions/{id}/code": {
                "get": { "summary": "Current code", "parameters": id_param, "responses": { "200": code_ok, "404": err } },
                "patch": {
                    "summary": "Set one code entry by index or name",
                    "parameters": id_param,
                    "requestBody": { "required": true, "content": { "application/json": { "schema": {
                        "type": "object",
                        "properties": { "index": { "type": "integer" }, "name": { "type": "string" }, "value": { "type": "number" } },
                        "required": ["value"]
                    } } } },
                    "responses": {
                        "200": { "description": "edited", "content": { "application/json": { "schema": {
                            "type": "object",
                            "properties": {
                                "index": { "type": "integer" }, "name": { "type": "string" }, "value": { "type": "number" },
                                "out_of_range": { "type": "boolean" }, "code": { "$ref": "#/components/schemas/CodeView" }
                            }
                        } } } },
                        "400": err, "404": err
                    }
                }
            },
            "/sessions/{id}/undo": { "post": {
                "summary": "Restore the code before the last change",
                "parameters": id_param,
                "responses": { "200": code_ok, "404": err, "409": err }
            } },
            "/sessions/{id}/mesh": { "get": {
                "summary": "Identity mesh deformed by the current code, as binary PLY",
                "parameters": id_param,
                "responses": {
                    "200": {
                        "description": "binary PLY",
                        "headers": {
                            "ETag": { "schema": { "type": "string" } },
                            "x-code-version": { "schema": { "type": "integer" } }
                        },
                        "content": { "application/octet-stream": { "schema": { "type": "string", "format": "binary" } } }
                    },
                    "404": err
                }
            } }
        },
        "components": { "schemas": {
            "CodeView": code_view,
            "Error": { "type": "object", "properties": {
                "error": { "type": "string" },
                "diagnostics": { "type": "array", "items": { "type": "string" } }
            } }
        } }
    })
}

/// Binds `0.0.0.0:port` and serves until the process ends.
pub async fn serve(model: Model, port: u16) -> anyhow::Result<()> {
    let app = router(AppState::new(model));
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).await?;
    Ok(())
}
