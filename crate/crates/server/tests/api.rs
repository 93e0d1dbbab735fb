use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use biasgpt_core::duel::{DuelRunner, DEFAULT_FALLBACK};
use biasgpt_core::engine::{ChatRequest, EngineError, EngineKind, GenerationEngine, MockEngine};
use biasgpt_core::rating::RatingLog;
use biasgpt_core::router::SharedLexicon;
use biasgpt_core::{Registry, SharedRegistry};
use biasgpt_server::{app, AppState, CorsOrigins, ReloadSources};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state_with(engine: Arc<dyn GenerationEngine>) -> Arc<AppState> {
    Arc::new(AppState::new(DuelRunner::new(engine), Arc::new(RatingLog::in_memory())))
}

fn mock_app() -> (Router, Arc<AppState>) {
    let state = state_with(Arc::new(MockEngine));
    (app(state.clone(), &CorsOrigins::default()), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn raw_post(app: &Router, uri: &str, body: &str) -> StatusCode {
    let req = Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    app.clone().oneshot(req).await.unwrap().status()
}

#[tokio::test]
async fn gender_prompt_returns_forced_pair() {
    let (app, _) = mock_app();
    let (status, body) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "are women or men better leaders?"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["dimension"], "gender");
    assert_eq!(body["responses"][0]["model_name"], "Male Gender Model");
    assert_eq!(body["responses"][1]["model_name"], "Female Gender Model");
    assert_eq!(body["responses"][0]["text"], "MOCK(Male): are women or men better leaders?");
    assert_eq!(body["duel_id"].as_str().unwrap().len(), 26);
    assert!(body["seed"].is_u64());
}

#[tokio::test]
async fn seeded_race_prompt_is_reproducible() {
    let (app, _) = mock_app();
    let req = json!({"prompt": "Is racism declining?", "seed": 42});
    let (_, a) = call(&app, "POST", "/api/prompt", Some(req.clone())).await;
    let (_, b) = call(&app, "POST", "/api/prompt", Some(req)).await;
    assert_eq!(a["responses"], b["responses"]);
    assert_ne!(a["duel_id"], b["duel_id"]);
    assert_eq!(a["seed"], 42);
    // seed 42 with no variant named draws White and Black
    assert_eq!(a["responses"][0]["model_name"], "White Race Model");
    assert_eq!(a["responses"][1]["model_name"], "Black Race Model");
}

#[tokio::test]
async fn bad_prompts_are_400() {
    let (app, _) = mock_app();
    assert_eq!(call(&app, "POST", "/api/prompt", Some(json!({"prompt": ""}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/api/prompt", Some(json!({"prompt": "  "}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/api/prompt", Some(json!({"text": "x"}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(raw_post(&app, "/api/prompt", "{not json").await, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", "/api/prompt", Some(json!({"prompt": 5}))).await.0, StatusCode::BAD_REQUEST);
    let long = "men ".repeat(1001);
    assert_eq!(call(&app, "POST", "/api/prompt", Some(json!({"prompt": long}))).await.0, StatusCode::BAD_REQUEST);
    let limit = "m".repeat(4000);
    assert_eq!(call(&app, "POST", "/api/prompt", Some(json!({"prompt": limit}))).await.0, StatusCode::OK);
}

#[tokio::test]
async fn fallback_cannot_be_rated() {
    let (app, state) = mock_app();
    let (status, body) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "What is 2+2?"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"fallback": DEFAULT_FALLBACK}));
    let (status, _) = call(
        &app,
        "POST",
        "/api/rating",
        Some(json!({"duel_id": "", "modelName": "Young Age Model", "rating": 5})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(state.ratings.snapshot().unwrap().is_empty());
    assert!(state.duels.is_empty());
}

#[tokio::test]
async fn rating_flow_and_errors() {
    let (app, state) = mock_app();
    let (_, duel) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "Do older people or young people work harder?"}))).await;
    let id = duel["duel_id"].as_str().unwrap();
    assert_eq!(duel["responses"][0]["model_name"], "Young Age Model");

    let (status, body) = call(&app, "POST", "/api/rating", Some(json!({"duel_id": id, "modelName": "Young Age Model", "rating": 7}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["ratingName"], "Highly Biased");
    assert_eq!(body["documentID"].as_str().unwrap().len(), 26);

    for (payload, expected) in [
        (json!({"duel_id": id, "modelName": "Young Age Model", "rating": 0}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"duel_id": id, "modelName": "Young Age Model", "rating": 11}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"duel_id": id, "modelName": "Male Gender Model", "rating": 3}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"duel_id": id, "modelName": "No Such Model", "rating": 3}), StatusCode::UNPROCESSABLE_ENTITY),
        (json!({"duel_id": "nonexistent", "modelName": "Young Age Model", "rating": 3}), StatusCode::NOT_FOUND),
        (json!({"modelName": "Young Age Model", "rating": 3}), StatusCode::BAD_REQUEST),
        (json!({"duel_id": id, "modelName": "Young Age Model", "rating": "7"}), StatusCode::BAD_REQUEST),
    ] {
        let (status, _) = call(&app, "POST", "/api/rating", Some(payload.clone())).await;
        assert_eq!(status, expected, "{payload}");
    }
    let entries = state.ratings.snapshot().unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].duel_id.as_deref(), Some(id));
}

#[tokio::test]
async fn analytics_reflects_ratings() {
    let (app, _) = mock_app();
    let (status, empty) = call(&app, "GET", "/api/analytics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(empty["total_entries"], 0);
    assert_eq!(empty["label_counts"].as_array().unwrap().len(), 10);
    assert!(empty["label_counts"].as_array().unwrap().iter().all(|c| c["count"] == 0));

    let (_, duel) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "are women or men better leaders?"}))).await;
    let id = duel["duel_id"].as_str().unwrap();
    for (model, rating) in [("Male Gender Model", 3), ("Female Gender Model", 9)] {
        let (s, _) = call(&app, "POST", "/api/rating", Some(json!({"duel_id": id, "modelName": model, "rating": rating}))).await;
        assert_eq!(s, StatusCode::CREATED);
    }
    let (_, summary) = call(&app, "GET", "/api/analytics", None).await;
    assert_eq!(summary["total_entries"], 2);
    let per_model = summary["per_model"].as_array().unwrap();
    assert_eq!(per_model[0]["modelName"], "Female Gender Model");
    assert_eq!(per_model[0]["mean"], 9.0);
    assert_eq!(per_model[1]["mean"], 3.0);
    assert_eq!(summary["extremes"]["Female Gender Model"]["total"], 1);

    let (status, plot) = call(&app, "GET", "/api/analytics/plot", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(plot["averages"][0]["value"], 9.0);
    assert_eq!(plot["label_counts"].as_array().unwrap().len(), 10);
}

#[tokio::test]
async fn personas_and_scale() {
    let (app, _) = mock_app();
    let (status, personas) = call(&app, "GET", "/api/personas", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = personas.as_array().unwrap();
    assert_eq!(list.len(), 8);
    assert_eq!(list[0], json!({"variant": "young", "display_name": "Young Age Model", "dimension": "age"}));
    let names: std::collections::BTreeSet<_> = list.iter().map(|p| p["display_name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 8);

    let (_, scale) = call(&app, "GET", "/api/scale", None).await;
    assert_eq!(scale.as_array().unwrap().len(), 10);
    assert_eq!(scale[6], json!({"value": 7, "label": "Highly Biased"}));
    assert_eq!(scale[0]["label"], "Not biased");
}

#[tokio::test]
async fn health_reports_engine() {
    let (app, _) = mock_app();
    let (status, body) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["engine"], "mock");
    assert_eq!(body["status"], "ok");
    assert!(body["version"].is_string());
}

struct FailsFor(&'static str);

#[async_trait::async_trait]
impl GenerationEngine for FailsFor {
    fn kind(&self) -> EngineKind {
        EngineKind::Live
    }

    async fn complete(&self, req: &ChatRequest) -> Result<String, EngineError> {
        if req.label == self.0 {
            Err(EngineError::Transport("connection reset".into()))
        } else {
            Ok("fine".into())
        }
    }
}

#[tokio::test]
async fn generation_failure_is_502_naming_persona() {
    let state = state_with(Arc::new(FailsFor("Female")));
    let app = app(state.clone(), &CorsOrigins::default());
    let (status, body) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "are women or men better leaders?"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["persona"], "Female Gender Model");
    assert!(state.duels.is_empty());
}

#[tokio::test]
async fn evicted_duels_are_no_longer_rateable() {
    let state = Arc::new(
        AppState::new(DuelRunner::new(Arc::new(MockEngine)), Arc::new(RatingLog::in_memory())).with_duel_capacity(2),
    );
    let app = app(state.clone(), &CorsOrigins::default());
    let mut ids = Vec::new();
    for _ in 0..3 {
        let (_, d) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "young or old?"}))).await;
        ids.push(d["duel_id"].as_str().unwrap().to_string());
    }
    assert_eq!(state.duels.len(), 2);
    let rate = |id: &str| json!({"duel_id": id, "modelName": "Old Age Model", "rating": 2});
    assert_eq!(call(&app, "POST", "/api/rating", Some(rate(&ids[0]))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "POST", "/api/rating", Some(rate(&ids[2]))).await.0, StatusCode::CREATED);
}

#[tokio::test]
async fn reload_swaps_lexicon_and_registry() {
    let dir = tempfile::tempdir().unwrap();
    let lex = dir.path().join("lexicon.toml");
    let reg = dir.path().join("registry.toml");
    std::fs::write(&lex, "[dimensions]\nage = [\"vintage\"]\ngender = [\"gender\"]\nrace = [\"race\"]\n").unwrap();
    std::fs::write(&reg, "[old]\ndisplay_name = \"Elder Model\"\n").unwrap();
    let state = Arc::new(
        AppState::new(DuelRunner::new(Arc::new(MockEngine)), Arc::new(RatingLog::in_memory()))
            .with_registry(SharedRegistry::new(Registry::canonical()))
            .with_lexicon(SharedLexicon::default())
            .with_reload(ReloadSources {
                lexicon: Some(lex.clone()),
                registry_overrides: Some(reg),
            }),
    );
    let app = app(state, &CorsOrigins::default());
    let (_, before) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "is vintage better?"}))).await;
    assert!(before.get("fallback").is_some());

    let (status, body) = call(&app, "POST", "/api/admin/reload", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["reloaded"], json!(["lexicon", "registry"]));
    let (_, after) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "is vintage better?"}))).await;
    assert_eq!(after["responses"][1]["model_name"], "Elder Model");

    std::fs::write(&lex, "[dimensions]\nage = [\"x\"]\n").unwrap();
    let (status, _) = call(&app, "POST", "/api/admin/reload", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    // the previous lexicon is still active
    let (_, still) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "is vintage better?"}))).await;
    assert!(still.get("duel_id").is_some());
}

#[tokio::test]
async fn cors_headers_for_configured_origin() {
    let state = state_with(Arc::new(MockEngine));
    let app = app(state, &CorsOrigins(vec!["http://localhost:5173".into()]));
    let req = Request::builder()
        .method("GET")
        .uri("/api/personas")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
}

#[tokio::test]
async fn concurrent_ratings_all_land() {
    let (app, state) = mock_app();
    let (_, duel) = call(&app, "POST", "/api/prompt", Some(json!({"prompt": "young or old?"}))).await;
    let id = duel["duel_id"].as_str().unwrap().to_string();
    let mut tasks = Vec::new();
    for i in 0..100 {
        let app = app.clone();
        let id = id.clone();
        tasks.push(tokio::spawn(async move {
            call(&app, "POST", "/api/rating", Some(json!({"duel_id": id, "modelName": "Young Age Model", "rating": i % 10 + 1}))).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::CREATED);
    }
    assert_eq!(state.ratings.snapshot().unwrap().len(), 100);
}
