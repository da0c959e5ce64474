//! Run the HTTP service in-process on an ephemeral port and drive one edit
//! through it with a blocking client.
//!
//! cargo run --example service

use std::sync::Arc;

use base64::Engine;
use brushedit::conductor::{ModelBundle, RoundParams, SessionStore};
use brushedit::instructor::Instructor;
use brushedit::scene::{Color, SceneGraph, SceneObject, ShapeKind};
use brushedit::service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = std::env::temp_dir().join("brushedit-service-example");
    let state = AppState::new(
        SessionStore::open(&store)?,
        ModelBundle::untrained(Default::default(), 0)?,
        Instructor::offline(),
        RoundParams { steps: 10, ..RoundParams::default() },
    );
    let app = router(Arc::new(state), ServiceConfig::default().cors()?);

    let rt = tokio::runtime::Runtime::new()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let base = format!("http://{}", listener.local_addr()?);
    rt.spawn(async move { axum::serve(listener, app).await });
    println!("listening on {base}");

    let image = SceneGraph {
        height: 32,
        width: 32,
        background: Color::White,
        objects: vec![SceneObject { kind: ShapeKind::Circle, color: Color::Red, cy: 10, cx: 10, size: 4 }],
    }
    .render();
    let b64 = base64::engine::general_purpose::STANDARD.encode(image.encode_png()?);

    let http = reqwest::blocking::Client::new();
    let created: Value = http.post(format!("{base}/sessions")).json(&json!({ "image_base64": b64 })).send()?.json()?;
    let sid = created["session_id"].as_str().unwrap_or_default();
    println!("POST /sessions -> {created}");

    let plan: Value = http
        .post(format!("{base}/sessions/{sid}/plan"))
        .json(&json!({ "instruction": "remove the red circle" }))
        .send()?
        .json()?;
    println!("POST plan -> {} {} ({})", plan["edit_type"], plan["target_object"], plan["plan_id"]);

    let round: Value = http
        .post(format!("{base}/sessions/{sid}/rounds"))
        .json(&json!({ "plan_ref": plan["plan_id"], "seed": 1 }))
        .send()?
        .json()?;
    println!("POST rounds -> {} result {} ({} calls)", round["status"], round["result"], round["denoiser_calls"]);

    let png = http.get(format!("{base}/artifacts/{}", round["result"].as_str().unwrap_or_default())).send()?.bytes()?;
    println!("GET artifact -> {} bytes", png.len());

    let bad = http.post(format!("{base}/sessions/{sid}/rounds")).json(&json!({ "plan_ref": plan["plan_id"], "w": 2 })).send()?;
    println!("w=2 -> {} {}", bad.status(), bad.text()?);
    Ok(())
}
