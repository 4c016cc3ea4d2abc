use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cellmorph::engine::{run_script, EngineConfig, MorphoScript};
use cellmorph::io::{self, StructureFile};
use cellmorph::{fixtures, Point3};
use cellmorph_service::{router, AppState, PreviewResponse, SessionView, StepResponse, SurfaceResponse};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(AppState::new(EngineConfig::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn ok<T: serde::de::DeserializeOwned>(app: &Router, method: &str, uri: &str, body: Option<Value>) -> T {
    let (status, bytes) = call(app, method, uri, body).await;
    assert!(status.is_success(), "{method} {uri}: {status} {}", String::from_utf8_lossy(&bytes));
    serde_json::from_slice(&bytes).unwrap()
}

async fn error(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    assert!(!status.is_success(), "{method} {uri} unexpectedly succeeded");
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    for key in ["code", "message", "detail"] {
        assert!(v.get(key).is_some(), "error body lacks `{key}`: {v}");
    }
    (status, v)
}

fn script_json(script: &MorphoScript, steps: usize) -> Value {
    let partial = MorphoScript {
        name: script.name.clone(),
        steps: script.steps[..steps].to_vec(),
    };
    json!({ "script_text": io::script_to_string(&partial).unwrap() })
}

async fn structure_bytes(app: &Router, id: &str) -> Vec<u8> {
    let (status, bytes) = call(app, "GET", &format!("/sessions/{id}/export?format=structure"), None).await;
    assert_eq!(status, StatusCode::OK);
    bytes
}

#[tokio::test]
async fn stepwise_three_cell() {
    let app = app();
    let v: SessionView = ok(&app, "POST", "/sessions", None).await;
    let id = v.session;
    assert_eq!(v.dim_w, 0);
    let script = fixtures::three_cell_script();
    let seed = serde_json::to_value(&script.steps[0].step).unwrap();
    let mut seed = seed.as_object().unwrap().clone();
    seed.remove("op");
    let r: StepResponse = ok(&app, "POST", &format!("/sessions/{id}/seed"), Some(Value::Object(seed))).await;
    assert_eq!(r.state.dim_w, 1);
    let adhere = serde_json::to_value(&script.steps[1].step).unwrap();
    let mut adhere = adhere.as_object().unwrap().clone();
    adhere.remove("op");
    let r: StepResponse = ok(&app, "POST", &format!("/sessions/{id}/adhere"), Some(Value::Object(adhere))).await;
    assert_eq!(r.log.observed_delta_dim, 1);
    let state: SessionView = ok(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(state.dim_w, 2);
    assert_eq!(state.counts.unwrap().mechanisms, 0);
    assert_eq!(state.structure.morpho.cells().len(), 2);
}

#[tokio::test]
async fn preview_is_pure_and_undo_is_exact() {
    let app = app();
    let v: SessionView = ok(&app, "POST", "/sessions", Some(script_json(&fixtures::triplex_script(), 2))).await;
    let id = v.session;
    assert_eq!(v.dim_w, 2);
    let before_view = call(&app, "GET", &format!("/sessions/{id}"), None).await.1;
    let before = structure_bytes(&app, &id).await;

    let fuse = json!({ "op": "fuse", "members": [[2, 4], [3, 5]] });
    let p: PreviewResponse = ok(&app, "POST", &format!("/sessions/{id}/preview"), Some(fuse)).await;
    assert_eq!((p.dim_w, p.struts, p.cables), (1, 3, 9));
    assert_eq!(call(&app, "GET", &format!("/sessions/{id}"), None).await.1, before_view);
    assert_eq!(structure_bytes(&app, &id).await, before);

    let r: StepResponse =
        ok(&app, "POST", &format!("/sessions/{id}/fuse"), Some(json!({ "members": [[2, 4], [3, 5]] }))).await;
    assert_eq!(r.state.dim_w, 1);
    let after = structure_bytes(&app, &id).await;
    assert_ne!(after, before);

    let u: SessionView = ok(&app, "POST", &format!("/sessions/{id}/undo"), None).await;
    assert!(u.can_redo);
    assert_eq!(structure_bytes(&app, &id).await, before);
    let _: SessionView = ok(&app, "POST", &format!("/sessions/{id}/redo"), None).await;
    assert_eq!(structure_bytes(&app, &id).await, after);
}

#[tokio::test]
async fn history_replays_to_the_same_bytes() {
    let app = app();
    let v: SessionView = ok(&app, "POST", "/sessions", Some(script_json(&fixtures::three_cell_script(), 3))).await;
    let id = v.session;
    let _: StepResponse = ok(&app, "POST", &format!("/sessions/{id}/fuse"), Some(json!({ "members": [[2, 3]] }))).await;
    let (_, script) = call(&app, "GET", &format!("/sessions/{id}/export?format=script"), None).await;
    let script = io::parse_script(std::str::from_utf8(&script).unwrap()).unwrap();
    let replay = run_script(&script, &EngineConfig::default()).unwrap();
    assert_eq!(io::structure_to_string(&replay.design).unwrap().into_bytes(), structure_bytes(&app, &id).await);
}

#[tokio::test]
async fn placement_surface_then_place() {
    let app = app();
    let v: SessionView = ok(&app, "POST", "/sessions", Some(script_json(&fixtures::triplex_script(), 2))).await;
    let id = v.session;
    let s: SurfaceResponse =
        ok(&app, "GET", &format!("/sessions/{id}/placement-surface?fuse=2-4,3-5&count=16&seed=3"), None).await;
    assert_eq!(s.free_node.0, 6);
    assert_eq!(s.samples.len(), 16);
    assert!(s.polynomials[0].is_some());

    let (status, e) = error(
        &app,
        "POST",
        &format!("/sessions/{id}/place"),
        Some(json!({ "node": 6, "at": [0.4, -0.9, 1.3] })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "placement_rejected");
    assert!(e["detail"]["residual"].as_f64().unwrap() > 0.0);

    // The rejected request left the active constraint in place.
    let at: Point3 = s.samples[0];
    let _: StepResponse =
        ok(&app, "POST", &format!("/sessions/{id}/place"), Some(json!({ "node": 6, "at": at }))).await;
    let r: StepResponse =
        ok(&app, "POST", &format!("/sessions/{id}/fuse"), Some(json!({ "members": [[2, 4], [3, 5]] }))).await;
    assert_eq!(r.state.dim_w, 1);
}

#[tokio::test]
async fn structured_errors() {
    let app = app();
    let (status, e) = error(&app, "GET", "/sessions/s999", None).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let v: SessionView = ok(&app, "POST", "/sessions", Some(script_json(&fixtures::three_cell_script(), 1))).await;
    let id = v.session;
    let (status, e) = error(&app, "POST", &format!("/sessions/{id}/adhere"), Some(json!({ "nodes": [1, 2] }))).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));

    let cell = json!({
        "nodes": [1, 2, 8, 9, 10],
        "new_nodes": { "8": [2.0, 1.0, 0.3], "9": [1.5, -1.0, 0.2], "10": [2.2, 0.1, -0.9] }
    });
    let (status, e) = error(&app, "POST", &format!("/sessions/{id}/adhere"), Some(cell)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "mechanism_risk");
    assert_eq!(e["detail"]["shared"], 2);

    let (status, e) = error(&app, "POST", &format!("/sessions/{id}/fuse"), Some(json!({ "members": [[1, 9]] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["code"], "unknown_member");

    let fresh: SessionView = ok(&app, "POST", "/sessions", None).await;
    let (status, e) = error(&app, "POST", &format!("/sessions/{}/undo", fresh.session), None).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::CONFLICT, Some("nothing_to_undo")));

    let (status, e) = error(&app, "GET", &format!("/sessions/{id}/export?format=png"), None).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));

    let (status, e) = error(&app, "POST", "/sessions", Some(json!({ "script_text": "format = 1" }))).await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("parse")));
}

#[tokio::test]
async fn sessions_from_structures() {
    let app = app();
    let run = run_script(&fixtures::triplex_script(), &EngineConfig::default()).unwrap();
    let file = StructureFile::from_design(&run.design);
    let v: SessionView = ok(&app, "POST", "/sessions", Some(json!({ "structure": file }))).await;
    assert_eq!((v.dim_w, v.structure.members.len()), (1, 12));
    let (status, e) = error(
        &app,
        "POST",
        &format!("/sessions/{}/place", v.session),
        Some(json!({ "node": 6, "at": [0.0, -1.0, 1.2] })),
    )
    .await;
    assert_eq!((status, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("usage")));
    let (status, obj) = call(&app, "GET", &format!("/sessions/{}/export?format=obj", v.session), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(String::from_utf8(obj).unwrap().lines().filter(|l| l.starts_with("l ")).count(), 12);
}

#[tokio::test]
async fn sessions_are_independent() {
    let app = app();
    let mut handles = Vec::new();
    for _ in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let v: SessionView = ok(&app, "POST", "/sessions", Some(script_json(&fixtures::triplex_script(), 3))).await;
            v
        }));
    }
    let mut ids = std::collections::BTreeSet::new();
    for h in handles {
        let v = h.await.unwrap();
        assert_eq!(v.dim_w, 1);
        ids.insert(v.session);
    }
    assert_eq!(ids.len(), 8);
}
