use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use facrig::cli::smoke_config;
use facrig::service::{openapi_document, router, AppState, CODE_VERSION_HEADER};
use facrig_core::io::ply::{read_ply, write_ply};
use facrig_core::rig::{build_closed_eye_template, build_synthetic_rig, BlendshapeRig};
use facrig_core::TriangleMesh;
use facrig_model::Model;
use serde_json::{json, Value};
use tower::ServiceExt;

fn rig() -> &'static BlendshapeRig {
    static RIG: OnceLock<BlendshapeRig> = OnceLock::new();
    RIG.get_or_init(|| build_synthetic_rig(2, 500).unwrap())
}

fn app() -> Router {
    static STATE: OnceLock<Arc<AppState>> = OnceLock::new();
    router(STATE.get_or_init(|| AppState::new(Model::new(smoke_config().model).unwrap())).clone())
}

async fn call(app: &Router, method: Method, uri: &str, body: Body, json_body: bool) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    req = req.header(
        header::CONTENT_TYPE,
        if json_body { "application/json" } else { "application/octet-stream" },
    );
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    (status, headers, bytes)
}

async fn post_mesh(app: &Router, uri: &str, mesh: &TriangleMesh<f64>) -> (StatusCode, Value) {
    let (s, _, b) = call(app, Method::POST, uri, Body::from(write_ply(mesh, &[])), false).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn patch_code(app: &Router, id: &str, body: Value) -> (StatusCode, Value) {
    let (s, _, b) = call(app, Method::PATCH, &format!("/sessions/{id}/code"), Body::from(body.to_string()), true).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn new_session(app: &Router) -> String {
    let (s, v) = post_mesh(app, "/sessions", &rig().template).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn valid_upload_creates_a_session_with_named_aus() {
    let app = app();
    let (s, v) = post_mesh(&app, "/sessions", &rig().template).await;
    assert_eq!(s, StatusCode::CREATED);
    let names: Vec<String> = serde_json::from_value(v["au_names"].clone()).unwrap();
    assert_eq!(names, facrig_core::rig::face::au_names());
    assert_eq!(names.len(), 53);
    assert_eq!(v["standardized"], false);
    assert!(v.get("warning").is_none());
}

#[tokio::test]
async fn garbage_upload_is_a_bad_request() {
    let app = app();
    let (s, _, b) = call(&app, Method::POST, "/sessions", Body::from(vec![0xffu8, 0x00, 0x13, 0x37]), false).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert!(v["error"].as_str().unwrap().contains("mesh"));
}

#[tokio::test]
async fn unusable_mesh_is_unprocessable_with_diagnostics() {
    let app = app();
    let ply = b"ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n";
    let (s, _, b) = call(&app, Method::POST, "/sessions", Body::from(ply.to_vec()), false).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert!(!v["diagnostics"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn closed_eyes_are_standardized_with_a_warning() {
    let app = app();
    let (closed, _) = build_closed_eye_template(2, 600).unwrap();
    let (s, v) = post_mesh(&app, "/sessions", &closed).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["standardized"], true);
    assert!(v["warning"].is_string());
    assert!(v["vertex_count"].as_u64().unwrap() < closed.vertex_count() as u64);
}

#[tokio::test]
async fn zero_code_returns_the_identity_bit_exact() {
    let app = app();
    let id = new_session(&app).await;
    let (s, h, body) = call(&app, Method::GET, &format!("/sessions/{id}/mesh"), Body::empty(), false).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h[header::CONTENT_TYPE], "application/octet-stream");
    assert_eq!(h[CODE_VERSION_HEADER], "0");
    let got: TriangleMesh<f32> = read_ply(&body).unwrap();
    let sent: TriangleMesh<f32> = read_ply(&write_ply(&rig().template, &[])).unwrap();
    assert_eq!(got.triangles(), sent.triangles());
    for (a, b) in got.vertices().iter().zip(sent.vertices()) {
        for k in 0..3 {
            assert_eq!(a[k].to_bits(), b[k].to_bits());
        }
    }
}

#[tokio::test]
async fn repeated_gets_are_identical_and_edits_bump_the_version() {
    let app = app();
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/mesh");
    let (_, h1, b1) = call(&app, Method::GET, &uri, Body::empty(), false).await;
    let (_, h2, b2) = call(&app, Method::GET, &uri, Body::empty(), false).await;
    assert_eq!(b1, b2);
    assert_eq!(h1[header::ETAG], h2[header::ETAG]);
    let (s, _) = patch_code(&app, &id, json!({ "index": 3, "value": 0.5 })).await;
    assert_eq!(s, StatusCode::OK);
    let (_, h3, b3) = call(&app, Method::GET, &uri, Body::empty(), false).await;
    assert_ne!(h1[header::ETAG], h3[header::ETAG]);
    assert_eq!(h3[CODE_VERSION_HEADER], "1");
    let (_, _, b4) = call(&app, Method::GET, &uri, Body::empty(), false).await;
    assert_eq!(b3, b4);
}

#[tokio::test]
async fn patch_by_name_echoes_and_flags_out_of_range_values() {
    let app = app();
    let id = new_session(&app).await;
    let (s, v) = patch_code(&app, &id, json!({ "name": "jawOpen", "value": 0.8 })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["value"], 0.8);
    assert_eq!(v["out_of_range"], false);
    let k = v["index"].as_u64().unwrap() as usize;
    assert_eq!(v["code"]["z_facs"][k], 0.8);
    let (_, v) = patch_code(&app, &id, json!({ "name": "jawOpen", "value": 1.4 })).await;
    assert_eq!(v["out_of_range"], true);
    assert_eq!(v["code"]["z_facs"][k], 1.4);
    let (_, v) = patch_code(&app, &id, json!({ "index": 60, "value": -0.2 })).await;
    assert_eq!(v["out_of_range"], true);
    assert_eq!(v["name"], "ext7");
    assert_eq!(v["code"]["z_ext"][7], -0.2);
}

#[tokio::test]
async fn bad_patches_are_rejected() {
    let app = app();
    let id = new_session(&app).await;
    let (s, _) = patch_code(&app, &id, json!({ "name": "noSuchAu", "value": 0.1 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = patch_code(&app, &id, json!({ "index": 61, "value": 0.1 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = patch_code(&app, &id, json!({ "index": 1, "name": "jawOpen", "value": 0.1 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let other = uuid::Uuid::new_v4();
    let (s, _) = patch_code(&app, &other.to_string(), json!({ "index": 1, "value": 0.1 })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _, _) = call(&app, Method::GET, &format!("/sessions/{other}/mesh"), Body::empty(), false).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn undo_restores_the_previous_code() {
    let app = app();
    let id = new_session(&app).await;
    let undo = format!("/sessions/{id}/undo");
    let (s, _, _) = call(&app, Method::POST, &undo, Body::empty(), false).await;
    assert_eq!(s, StatusCode::CONFLICT);
    patch_code(&app, &id, json!({ "name": "jawOpen", "value": 0.3 })).await;
    let (_, v) = patch_code(&app, &id, json!({ "name": "jawOpen", "value": 0.9 })).await;
    let k = v["index"].as_u64().unwrap() as usize;
    let (s, _, b) = call(&app, Method::POST, &undo, Body::empty(), false).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["z_facs"][k], 0.3);
    assert_eq!(v["undo_depth"], 1);
    call(&app, Method::POST, &undo, Body::empty(), false).await;
    let (_, _, b) = call(&app, Method::GET, &format!("/sessions/{id}/code"), Body::empty(), false).await;
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert!(v["z_facs"].as_array().unwrap().iter().all(|x| x == 0.0));
    let (_, h, _) = call(&app, Method::GET, &format!("/sessions/{id}/mesh"), Body::empty(), false).await;
    assert_eq!(h[CODE_VERSION_HEADER], "4");
}

#[tokio::test]
async fn encode_sets_the_code_and_is_repeatable() {
    let app = app();
    let id = new_session(&app).await;
    let mut w = vec![0.0; 53];
    w[10] = 0.7;
    let expr = facrig_core::evaluate_rig(rig(), &vec![0.0; rig().identity_basis.len()], &w).unwrap();
    let uri = format!("/sessions/{id}/encode");
    let (s, a) = post_mesh(&app, &uri, &expr).await;
    assert_eq!(s, StatusCode::OK, "{a}");
    let (_, b) = post_mesh(&app, &uri, &expr).await;
    assert_eq!(a["z_facs"], b["z_facs"]);
    assert_eq!(a["z_facs"].as_array().unwrap().len(), 53);
    assert_eq!(a["z_ext"].as_array().unwrap().len(), 8);
    assert_eq!(b["version"], 2);
    let (_, _, c) = call(&app, Method::GET, &format!("/sessions/{id}/code"), Body::empty(), false).await;
    let c: Value = serde_json::from_slice(&c).unwrap();
    assert_eq!(c["z_facs"], a["z_facs"]);
}

#[tokio::test]
async fn encode_errors() {
    let app = app();
    let id = new_session(&app).await;
    let (s, _, _) = call(&app, Method::POST, &format!("/sessions/{id}/encode"), Body::from(vec![1u8, 2, 3]), false).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = post_mesh(&app, &format!("/sessions/{}/encode", uuid::Uuid::new_v4()), &rig().template).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sessions_are_isolated_under_interleaved_edits() {
    let app = app();
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    let mut tasks = Vec::new();
    for i in 0..20 {
        let app = app.clone();
        let (id, value) = if i % 2 == 0 { (a.clone(), 0.25) } else { (b.clone(), 0.75) };
        tasks.push(tokio::spawn(async move {
            patch_code(&app, &id, json!({ "index": i / 2, "value": value })).await
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap().0, StatusCode::OK);
    }
    for (id, value) in [(a, 0.25), (b, 0.75)] {
        let (_, _, body) = call(&app, Method::GET, &format!("/sessions/{id}/code"), Body::empty(), false).await;
        let v: Value = serde_json::from_slice(&body).unwrap();
        let z = v["z_facs"].as_array().unwrap();
        for (k, x) in z.iter().enumerate() {
            assert_eq!(x.as_f64().unwrap(), if k < 10 { value } else { 0.0 });
        }
        assert_eq!(v["version"], 10);
    }
}

#[tokio::test]
async fn openapi_document_lists_every_route() {
    let app = app();
    let (s, _, b) = call(&app, Method::GET, "/openapi.json", Body::empty(), false).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v, openapi_document());
    let paths = v["paths"].as_object().unwrap();
    for p in ["/sessions", "/sessions/{id}/encode", "/sessions/{id}/code", "/sessions/{id}/undo", "/sessions/{id}/mesh"] {
        assert!(paths.contains_key(p), "{p}");
    }
}
