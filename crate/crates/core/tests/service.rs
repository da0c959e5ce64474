mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::Engine;
use brushedit::conductor::{ModelBundle, RoundParams, SessionStore};
use brushedit::image::Image;
use brushedit::instructor::Instructor;
use brushedit::scene::{Color, SceneGraph, ShapeKind};
use brushedit::service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn params() -> RoundParams {
    RoundParams {
        steps: 4,
        ..RoundParams::default()
    }
}

fn app(store: &std::path::Path) -> Router {
    let state = AppState::new(
        SessionStore::open(store).unwrap(),
        ModelBundle::untrained(Default::default(), 0).unwrap(),
        Instructor::offline(),
        params(),
    );
    router(Arc::new(state), ServiceConfig::default().cors().unwrap())
}

fn picture() -> Image {
    SceneGraph {
        height: 64,
        width: 64,
        background: Color::White,
        objects: vec![
            common::obj(ShapeKind::Circle, Color::Red, 18, 18, 7),
            common::obj(ShapeKind::Square, Color::Blue, 44, 44, 6),
        ],
    }
    .render()
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn create(app: &Router) -> Value {
    let req = Request::post("/sessions")
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(picture().encode_png().unwrap()))
        .unwrap();
    let (s, b) = call(app, req).await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&b));
    serde_json::from_slice(&b).unwrap()
}

async fn plan(app: &Router, sid: &str, instruction: &str) -> Value {
    let (s, v) = post_json(app, &format!("/sessions/{sid}/plan"), json!({ "instruction": instruction })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v
}

fn assert_api_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()), "{v}");
}

#[tokio::test]
async fn health() {
    let dir = tempfile::tempdir().unwrap();
    let (s, b) = get(&app(dir.path()), "/health").await;
    assert_eq!((s, b.as_slice()), (StatusCode::OK, b"ok".as_slice()));
}

#[tokio::test]
async fn upload_then_fetch_source() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let created = create(&app).await;
    let (s, png) = get(&app, &format!("/artifacts/{}", created["source"].as_str().unwrap())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(Image::decode_png(&png).unwrap(), picture().quantized());
}

#[tokio::test]
async fn json_and_multipart_uploads() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let png = picture().encode_png().unwrap();
    let b64 = base64::engine::general_purpose::STANDARD.encode(&png);
    let (s, v) = post_json(&app, "/sessions", json!({ "image_base64": b64 })).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");

    let boundary = "XyZbOuNdArY";
    let mut body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"a.png\"\r\nContent-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(&png);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    let req = Request::post("/sessions")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    let (s, b) = call(&app, req).await;
    assert_eq!(s, StatusCode::CREATED, "{}", String::from_utf8_lossy(&b));

    let (_, list) = get(&app, "/sessions").await;
    let ids: Vec<String> = serde_json::from_slice(&list).unwrap();
    assert_eq!(ids.len(), 2);
}

#[tokio::test]
async fn garbage_upload_is_422() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let req = Request::post("/sessions")
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from("not a png"))
        .unwrap();
    let (s, b) = call(&app, req).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&serde_json::from_slice(&b).unwrap(), "validation");
}

#[tokio::test]
async fn plan_reports_removal() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sid = create(&app).await["session_id"].as_str().unwrap().to_string();
    let p = plan(&app, &sid, "remove the red circle").await;
    assert_eq!(p["edit_type"], "removal");
    assert_eq!(p["target_object"], "red circle");
    assert_eq!(p["instruction"], "remove the red circle");
    let (s, _) = get(&app, &format!("/artifacts/{}", p["mask_ref"].as_str().unwrap())).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn plan_for_missing_object_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sid = create(&app).await["session_id"].as_str().unwrap().to_string();
    let (s, v) = post_json(&app, &format!("/sessions/{sid}/plan"), json!({ "instruction": "remove the unicorn" })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_api_error(&v, "not_found");
    assert_eq!(v["stage"], "locate_target");
}

#[tokio::test]
async fn scale_out_of_range_is_422() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sid = create(&app).await["session_id"].as_str().unwrap().to_string();
    let pid = plan(&app, &sid, "remove the red circle").await["plan_id"].as_str().unwrap().to_string();
    let (s, v) = post_json(&app, &format!("/sessions/{sid}/rounds"), json!({ "plan_ref": pid, "w": 2.0 })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_api_error(&v, "validation");
    let (s, v) = post_json(&app, &format!("/sessions/{sid}/rounds"), json!({ "plan_ref": pid, "bogus": 1 })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_api_error(&v, "validation");
}

#[tokio::test]
async fn unknown_things_are_404() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for uri in ["/sessions/nope", "/jobs/nope", "/artifacts/nope.png", "/no/such/route"] {
        let (s, b) = get(&app, uri).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert_api_error(&serde_json::from_slice(&b).unwrap(), "not_found");
    }
    let (s, _) = get(&app, "/artifacts/..%2F..%2Fetc%2Fpasswd").await;
    assert!(s.is_client_error());
    let sid = create(&app).await["session_id"].as_str().unwrap().to_string();
    let (s, v) = post_json(&app, &format!("/sessions/{sid}/rounds"), json!({ "plan_ref": "missing" })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_api_error(&v, "not_found");
}

#[tokio::test]
async fn round_links_resolve_and_session_replays() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sid = create(&app).await["session_id"].as_str().unwrap().to_string();
    let pid = plan(&app, &sid, "remove the red circle").await["plan_id"].as_str().unwrap().to_string();
    let (s, round) = post_json(&app, &format!("/sessions/{sid}/rounds"), json!({ "plan_ref": pid, "seed": 3 })).await;
    assert_eq!(s, StatusCode::OK, "{round}");
    assert_eq!(round["status"], "done");
    assert_eq!(round["denoiser_calls"], 8);
    for key in ["source", "result", "raw"] {
        let (s, _) = get(&app, &format!("/artifacts/{}", round[key].as_str().unwrap())).await;
        assert_eq!(s, StatusCode::OK, "{key}");
    }
    let (_, png) = get(&app, &format!("/artifacts/{}", round["result"].as_str().unwrap())).await;
    assert_eq!(Image::decode_png(&png).unwrap().digest(), round["result_digest"].as_str().unwrap());

    // second round edits the first round's result
    let pid2 = plan(&app, &sid, "make the blue square red").await["plan_id"].as_str().unwrap().to_string();
    let (_, r2) = post_json(&app, &format!("/sessions/{sid}/rounds"), json!({ "plan_ref": pid2 })).await;
    assert_eq!(r2["source"], round["result"]);

    let (_, body) = get(&app, &format!("/sessions/{sid}")).await;
    let session: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(session["rounds"].as_array().unwrap().len(), 2);
    assert_eq!(session["plans"].as_array().unwrap().len(), 2);

    // a second server over the same store sees the same state
    let other = self::app(dir.path());
    for uri in [format!("/sessions/{sid}"), format!("/artifacts/{}", r2["result"].as_str().unwrap())] {
        assert_eq!(get(&app, &uri).await, get(&other, &uri).await, "{uri}");
    }
}

#[tokio::test]
async fn overrides_change_the_effective_plan() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sid = create(&app).await["session_id"].as_str().unwrap().to_string();
    let pid = plan(&app, &sid, "remove the red circle").await["plan_id"].as_str().unwrap().to_string();
    let mask = brushedit::mask::Mask::from_fn(64, 64, |y, x| if y >= 40 && x >= 40 { 1.0 } else { 0.0 });
    let b64 = base64::engine::general_purpose::STANDARD.encode(mask.encode_png().unwrap());
    let (s, round) = post_json(
        &app,
        &format!("/sessions/{sid}/rounds"),
        json!({ "plan_ref": pid, "overrides": { "mask_png_base64": b64, "caption": "green square", "w": 0.5 } }),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{round}");
    assert_eq!(round["effective_plan"]["target_caption"], "green square");
    assert_eq!(round["params"]["w"], 0.5);
    assert_ne!(round["effective_plan"]["mask_ref"], round["plan"]["mask_ref"]);
    let (s, _) = get(&app, &format!("/artifacts/{}", round["effective_plan"]["mask_ref"].as_str().unwrap())).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn async_round_completes_as_job() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let sid = create(&app).await["session_id"].as_str().unwrap().to_string();
    let pid = plan(&app, &sid, "remove the red circle").await["plan_id"].as_str().unwrap().to_string();
    let (s, v) = post_json(&app, &format!("/sessions/{sid}/rounds"), json!({ "plan_ref": pid, "async": true })).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = v["job_id"].as_str().unwrap().to_string();
    let mut last = Value::Null;
    for _ in 0..600 {
        let (s, b) = get(&app, &format!("/jobs/{job}")).await;
        assert_eq!(s, StatusCode::OK);
        last = serde_json::from_slice(&b).unwrap();
        if last["status"] != "running" {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    assert_eq!(last["status"], "done", "{last}");
    assert_eq!(last["round"]["index"], 1);
}

#[tokio::test]
async fn bench_endpoint_scores_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bench");
    std::fs::create_dir_all(&data).unwrap();
    let g = common::scene_a();
    g.render().save_png(data.join("a.png")).unwrap();
    g.object_mask(0).unwrap().save_png(data.join("a-mask.png")).unwrap();
    std::fs::write(
        data.join("manifest.json"),
        json!({ "benchmark": "toy", "items": [
            { "image_path": "a.png", "mask_path": "a-mask.png", "caption": "red circle", "split": "inside" }
        ]})
        .to_string(),
    )
    .unwrap();
    let app = app(&dir.path().join("store"));
    let (s, v) = post_json(&app, "/bench/run", json!({ "manifest_path": data.join("manifest.json"), "clip_stub": true })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["benchmark"], "toy");
    assert_eq!(v["summaries"][0]["n"], 1);
    assert!(v["summaries"][0]["clip_sim"].is_number());

    let (s, v) = post_json(&app, "/bench/run", json!({ "manifest_path": data.join("missing.json") })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_api_error(&v, "not_found");
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let dir = tempfile::tempdir().unwrap();
    let req = Request::options("/sessions")
        .header(header::ORIGIN, "http://localhost:3000")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app(dir.path()).oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}
