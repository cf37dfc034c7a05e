mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use image::RgbImage;
use posepilot::backend::{Backend, Encoder, ExternalBackend, MockBackend};
use posepilot::manifest::load_manifest;
use posepilot::promptsets::PromptStore;
use posepilot::service::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{bin, build_dataset, p, run, run_ok, split_manifest};

fn stub() -> ExternalBackend {
    let cmd = vec![bin().to_string(), "backend-stub".to_string()];
    ExternalBackend::spawn("clip-family", &cmd, json!({}), None).unwrap()
}

#[test]
fn stub_adapter_matches_in_process_mock() {
    let ext = stub();
    let mock = MockBackend::new();
    assert_eq!(ext.descriptor().embedding_dim, mock.descriptor().embedding_dim);
    assert_eq!(ext.descriptor().native_input_size, mock.descriptor().native_input_size);
    let img = RgbImage::from_fn(224, 224, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
    assert_eq!(ext.embed_image(&img).unwrap(), mock.embed_image(&img).unwrap());
    let texts = vec!["a photo of a person sitting".to_string(), "legs straight".to_string()];
    assert_eq!(ext.embed_texts(&texts).unwrap(), mock.embed_texts(&texts).unwrap());
    let a = ext.attribute_grid(&img, "legs straight").unwrap();
    let b = mock.attribute_grid(&img, "legs straight").unwrap();
    assert_eq!((a.width(), a.height(), a.values()), (b.width(), b.height(), b.values()));
    // the adapter's own validation errors surface as backend errors
    assert!(ext.embed_texts(&["".to_string()]).is_err());
}

#[test]
fn cli_classify_through_adapter_equals_mock() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [4, 4, 4]);
    let manifest = split_manifest(&ds);
    let a = dir.path().join("mock.jsonl");
    let b = dir.path().join("ext.jsonl");
    run_ok(&["classify", "--manifest", p(&manifest), "--promptset", "tier3", "--out", p(&a)]);
    let cmd = format!("{} backend-stub", bin());
    run_ok(&["classify", "--manifest", p(&manifest), "--promptset", "tier3", "--backend", "clip-family", "--backend-cmd", &cmd, "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_adapter_program_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [3, 3, 3]);
    let manifest = split_manifest(&ds);
    let out = run(&[
        "classify", "--manifest", p(&manifest), "--backend", "siglip-family", "--backend-cmd", "exit 1", "--out",
        p(&dir.path().join("s.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("siglip-family"));
}

#[tokio::test]
async fn dead_adapter_maps_to_503() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(dir.path(), [3, 3, 3]);
    let manifest = split_manifest(&ds);
    // answers the describe request, then exits
    let cmd: Vec<String> = ["sh", "-c", "read l; echo '{\"embedding_dim\":4,\"native_input_size\":[8,8]}'"]
        .map(String::from)
        .to_vec();
    let ext = ExternalBackend::spawn("clip-family", &cmd, json!({}), None).unwrap();
    let encoder = Arc::new(Encoder::new(Arc::new(ext)));
    let store = PromptStore::open(&dir.path().join("ps")).unwrap();
    let state =
        AppState::new(load_manifest(&manifest).unwrap(), dir.path().to_path_buf(), encoder, store, dir.path().join("ov")).unwrap();
    let app = router(state);

    let post = |uri: &str, body: Value| {
        Request::builder()
            .method(Method::POST)
            .uri(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap()
    };
    let res = app.clone().oneshot(post("/api/workingsets", json!({ "image_ids": ["sitting_000"] }))).await.unwrap();
    assert_eq!(res.status(), StatusCode::CREATED);
    let res = app.clone().oneshot(post("/api/evaluate", json!({ "ws_id": "ws-1", "prompt_set_id": "tier1" }))).await.unwrap();
    assert_eq!(res.status(), StatusCode::SERVICE_UNAVAILABLE);
    let v: Value = serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(v["code"], "backend_unavailable");
    assert_eq!(v["detail"]["backend"], "clip-family");
}
