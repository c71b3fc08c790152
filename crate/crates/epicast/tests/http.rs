mod common;

use std::process::Command;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::Utc;
use epicast::http::{router, AppState};
use epicast::pipeline::run_pipeline_at;
use epicast::store::{ArtifactKind, ArtifactStore};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use common::{bin, manifest, synth_inputs};

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: &str) -> Request<Body> {
    Request::post("/scenario")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn endpoints_serve_the_store() {
    let dir = synth_inputs(2, 1, false);
    let store = ArtifactStore::new(dir.path().join("data"));
    run_pipeline_at(&manifest(dir.path()), &store, false, Utc::now()).unwrap();
    let app = router(AppState::new(store.clone()));

    let (status, body) = call(&app, get("/healthz")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap()["status"], "ok");

    let (status, body) = call(&app, get("/geo-units")).await;
    assert_eq!(status, StatusCode::OK);
    let units: Value = serde_json::from_slice(&body).unwrap();
    let ids: Vec<&str> = units.as_array().unwrap().iter().map(|u| u["geo_id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec!["g000", "g001"]);
    assert!(units[0]["artifacts"]["forecast"]["written_at"].is_string());

    for (path, kind) in [
        ("forecast", ArtifactKind::Forecast),
        ("risk", ArtifactKind::Risk),
        ("analytics", ArtifactKind::Analytics),
    ] {
        let (status, body) = call(&app, get(&format!("/{path}/g001"))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body, std::fs::read(store.path("g001", kind)).unwrap(), "{path}");
    }

    for uri in ["/forecast/nowhere", "/risk/..", "/analytics/nowhere"] {
        let (status, body) = call(&app, get(uri)).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["error"], "not_found");
        assert!(v["message"].is_string());
    }
}

#[tokio::test]
async fn scenario_matches_cli_and_validates() {
    let dir = synth_inputs(1, 1, false);
    let store = ArtifactStore::new(dir.path().join("data"));
    run_pipeline_at(&manifest(dir.path()), &store, false, Utc::now()).unwrap();
    let app = router(AppState::new(store.clone()));
    let fc: Value = store.get("g000", ArtifactKind::Forecast).unwrap();
    let train = fc["train_len"].as_u64().unwrap() as usize;
    let end = fc["dates"][train - 1].as_str().unwrap().to_string();

    let body = format!(r#"{{"geo_id":"g000","adjust":-5,"from":"{end}","horizon":45,"label":"x"}}"#);
    let (status, served) = call(&app, post(&body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&served));

    let out_path = dir.path().join("scenario.json");
    let out = Command::new(bin())
        .args(["scenario", "--adjust", "-5", "--horizon", "45", "--label", "x", "--from", &end, "--fit"])
        .arg(store.path("g000", ArtifactKind::Fit))
        .arg("--out")
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(served, std::fs::read(&out_path).unwrap());

    let (status, body) = call(&app, post(r#"{"geo_id":"g000","adjust":"lots","horizon":0}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["error"], "validation");
    let fields: Vec<&str> = v["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert_eq!(fields, vec!["adjust", "from", "horizon"]);

    let (status, body) = call(&app, post(r#"{"geo_id":"g000","adjust":-5,"from":"1999-01-01","horizon":10}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{}", String::from_utf8_lossy(&body));
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["fields"][0]["field"], "from");

    let (status, _) = call(&app, post(&format!(r#"{{"geo_id":"nowhere","adjust":-5,"from":"{end}","horizon":10}}"#))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(&app, post("not json")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
