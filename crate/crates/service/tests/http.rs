use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use smarthangar_core::config::ServiceConfig;
use smarthangar_core::synth;
use smarthangar_core::time::format_rfc3339;
use smarthangar_core::Engine;
use smarthangar_service::router;
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(Engine::open(ServiceConfig::default()).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: impl Into<String>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri).body(Body::from(body.into())).unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

const METAR: &str = "METAR LKKB 121200Z 27010KT 9999 FEW030 18/09 Q1015
METAR LKKB 121230Z VRB02KT CAVOK 21/08 Q1016
METAR LKKB 121300Z 24008G18KT 9999 SCT040 22/07 Q1015
";

#[tokio::test]
async fn metar_ingest_counts_and_is_idempotent() {
    let app = app();
    let (status, body) = call(&app, Method::POST, "/ingest/metar?month=2023-03", METAR).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"parsed": 3, "stored": 3, "failed": []}));

    let (_, again) = call(&app, Method::POST, "/ingest/metar?month=2023-03", METAR).await;
    assert_eq!(again["stored"], 0);

    let mixed = "METAR LKKB 121400Z 27010KT 9999 18/09 Q1015\nMETAR LKKB 1215Z 27010KT 18/09\nMETAR LKKB 121500Z 27010KT 9999 19/09 Q1015\n";
    let (_, body) = call(&app, Method::POST, "/ingest/metar?month=2023-03", mixed).await;
    assert_eq!(body["parsed"], 2);
    assert_eq!(body["stored"], 2);
    assert_eq!(body["failed"][0]["line"], 2);
}

#[tokio::test]
async fn empty_ingest_bodies_are_rejected() {
    let app = app();
    for uri in ["/ingest/metar", "/ingest/pollution", "/ingest/series"] {
        let (status, body) = call(&app, Method::POST, uri, "  \n").await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(body["error"], "bad-request");
    }
    let (status, _) = call(&app, Method::POST, "/ingest/metar?month=2023-13", METAR).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn pollution_ingest_mirrors_metar() {
    let app = app();
    let csv = "station_id,timestamp_utc,species,concentration_ug_m3
AKBE,2023-03-12T12:00:00Z,SO2,4.2
AKBE,2023-03-12T13:00:00Z,PM10,21.0
AKBE,2023-03-12T14:00:00Z,XX,1.0
";
    let (status, body) = call(&app, Method::POST, "/ingest/pollution", csv).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["parsed"], 2);
    assert_eq!(body["stored"], 2);
    assert_eq!(body["failed"].as_array().unwrap().len(), 1);
    let (_, again) = call(&app, Method::POST, "/ingest/pollution", csv).await;
    assert_eq!(again["stored"], 0);
}

#[tokio::test]
async fn profile_round_trips_and_reports_the_bad_field() {
    let app = app();
    let (status, body) = call(&app, Method::GET, "/hangar/profile", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "missing-profile");

    let profile = serde_json::to_value(synth::kbely_profile()).unwrap();
    let (status, body) = call(&app, Method::PUT, "/hangar/profile", profile.to_string()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["version"], 1);
    let (_, body) = call(&app, Method::GET, "/hangar/profile", "").await;
    assert_eq!(body["profile"], profile);

    let mut bad = profile.clone();
    bad["exhibition_area"] = json!(bad["floor_area"].as_f64().unwrap() + 1.0);
    let (status, body) = call(&app, Method::PUT, "/hangar/profile", bad.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field"], "exhibition_area");
}

#[tokio::test]
async fn evaluation_errors_map_to_statuses() {
    let app = app();
    let range = json!({"from": "2023-01-01T00:00:00Z", "to": "2024-01-01T00:00:00Z"}).to_string();
    let (status, _) = call(&app, Method::POST, "/evaluate", range.clone()).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let profile = serde_json::to_value(synth::kbely_profile()).unwrap();
    call(&app, Method::PUT, "/hangar/profile", profile.to_string()).await;
    let (status, body) = call(&app, Method::POST, "/evaluate", range).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["missing"].as_array().unwrap().contains(&json!("indoor/temperature")));

    for uri in ["/recommendations", "/risk/timeline"] {
        let (status, body) = call(&app, Method::GET, uri, "").await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(body["message"], "no evaluation snapshot");
    }
}

async fn load_fixture(app: &Router, fixture: &synth::Fixture) {
    call(app, Method::PUT, "/hangar/profile", fixture.file("profile.json").unwrap()).await;
    let month = format!("/ingest/metar?month={}", fixture.range.start.format("%Y-%m"));
    for (uri, file) in [(month.as_str(), "metar.txt"), ("/ingest/pollution", "pollution.csv"), ("/ingest/series", "indoor.csv")] {
        let (status, body) = call(app, Method::POST, uri, fixture.file(file).unwrap()).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {body}");
        assert_eq!(body["failed"], json!([]), "{uri}");
    }
}

fn fixture_app(fixture: &synth::Fixture) -> Router {
    let mut config: ServiceConfig = ServiceConfig::parse(fixture.file("config.toml").unwrap()).unwrap();
    config.storage = None;
    config.pipeline.validation = None;
    router(Arc::new(Engine::open(config).unwrap()))
}

#[tokio::test]
async fn kbely_recommendations_carry_citations() {
    let fixture = synth::kbely_fixture();
    let app = fixture_app(&fixture);
    load_fixture(&app, &fixture).await;
    let range = json!({
        "from": format_rfc3339(&fixture.range.start),
        "to": format_rfc3339(&fixture.range.end),
    });
    let (status, body) = call(&app, Method::POST, "/evaluate", range.to_string()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["risk"]["corrosivity"]["category"], "C2");
    assert!((body["features"]["time_of_wetness"].as_f64().unwrap() - 60.6).abs() < 1e-9);
    assert_eq!(body["handle"].as_str().unwrap().len(), 64);

    let (status, rec) = call(&app, Method::GET, "/recommendations", "").await;
    assert_eq!(status, StatusCode::OK);
    let actions = rec["actions"].as_object().unwrap();
    let yes: Vec<&str> = actions
        .iter()
        .filter(|(_, v)| *v != "no_action")
        .map(|(k, _)| k.as_str())
        .collect();
    assert_eq!(yes.len(), 3, "{actions:?}");
    for output in ["install_heating", "install_insulation", "uninstall_carpets"] {
        assert_eq!(actions[output], "yes");
    }
    for row in rec["explanations"].as_array().unwrap() {
        if row["highlighted"] == true {
            assert!(!row["citations"].as_array().unwrap().is_empty(), "{row}");
        }
    }

    let (_, timeline) = call(&app, Method::GET, "/risk/timeline?from=2023-06-01T00:00:00Z&to=2023-06-02T00:00:00Z", "").await;
    let points = timeline.as_array().unwrap();
    assert_eq!(points.len(), 41);
    assert!(points.iter().all(|p| p["score"].as_f64().unwrap() < 0.8));
}

#[tokio::test]
async fn benign_year_timeline_is_all_zero() {
    let fixture = synth::benign_fixture();
    let app = fixture_app(&fixture);
    load_fixture(&app, &fixture).await;
    let range = json!({
        "from": format_rfc3339(&fixture.range.start),
        "to": format_rfc3339(&fixture.range.end),
    });
    let (status, body) = call(&app, Method::POST, "/evaluate", range.to_string()).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["features"]["time_of_wetness"], 0.0);
    assert_eq!(body["risk"]["corrosivity"]["category"], "C1");
    let (_, timeline) = call(&app, Method::GET, "/risk/timeline", "").await;
    let points = timeline.as_array().unwrap();
    assert!(!points.is_empty());
    assert!(points.iter().all(|p| p["score"] == 0.0));
}

#[tokio::test]
async fn dry_run_does_not_persist() {
    let fixture = synth::benign_fixture();
    let app = fixture_app(&fixture);
    load_fixture(&app, &fixture).await;
    let range = json!({
        "from": format_rfc3339(&fixture.range.start),
        "to": format_rfc3339(&fixture.range.end),
        "overrides": {"dry_run": true},
    });
    let (status, body) = call(&app, Method::POST, "/evaluate", range.to_string()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["persisted"], false);
    let (status, _) = call(&app, Method::GET, "/recommendations", "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn retrain_with_empty_delta_keeps_the_fingerprint() {
    let app = app();
    let (_, health) = call(&app, Method::GET, "/health", "").await;
    assert_eq!(health["status"], "ok");
    let (status, body) = call(&app, Method::POST, "/model/retrain", "{\"examples\": []}").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["fingerprint"], health["model_fingerprint"]);
    assert_eq!(body["previous_fingerprint"], health["model_fingerprint"]);
}

#[tokio::test]
async fn retrain_with_contradicting_examples_is_422() {
    let app = app();
    let input = serde_json::to_value(smarthangar_core::decision::DecisionInput::quiet(synth::benign_profile())).unwrap();
    let quiet = serde_json::to_value(smarthangar_core::ActionVector::default()).unwrap();
    let mut loud = quiet.clone();
    loud["air_exchange"] = json!("increase");
    let body = json!({"examples": [
        {"input": input, "actions": quiet},
        {"input": input, "actions": loud},
    ]});
    let (status, body) = call(&app, Method::POST, "/model/retrain", body.to_string()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["error"], "inconsistent-labels");
}
