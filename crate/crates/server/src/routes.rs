use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use biasgpt_core::analytics::{summary_with, AnalyticsSummary, PlotData};
use biasgpt_core::duel::{DuelError, DuelOutcome};
use biasgpt_core::rating::{BiasRating, RatingError};
use biasgpt_core::{BiasDimension, PersonaVariant};
use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::state::AppState;

/// Longest accepted prompt, in characters.
pub const MAX_PROMPT_CHARS: usize = 4_000;

type Shared = Arc<AppState>;

pub fn api(state: Shared) -> Router {
    Router::new()
        .route("/api/prompt", post(prompt))
        .route("/api/rating", post(rating))
        .route("/api/analytics", get(analytics))
        .route("/api/analytics/plot", get(plot))
        .route("/api/personas", get(personas))
        .route("/api/scale", get(scale))
        .route("/api/admin/reload", post(reload))
        .route("/healthz", get(health))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    persona: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            persona: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(p) = self.persona {
            body["persona"] = json!(p);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    tracing::error!("internal error: {e}");
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRequest {
    pub prompt: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ResponseCard {
    pub model_name: String,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct DuelPayload {
    pub duel_id: String,
    pub prompt: String,
    pub dimension: BiasDimension,
    pub seed: u64,
    pub created_at: String,
    pub responses: Vec<ResponseCard>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FallbackPayload {
    pub fallback: String,
}

async fn prompt(State(state): State<Shared>, body: Result<Json<PromptRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = body?;
    if req.prompt.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "prompt must not be empty"));
    }
    if req.prompt.chars().count() > MAX_PROMPT_CHARS {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("prompt exceeds {MAX_PROMPT_CHARS} characters"),
        ));
    }
    let seed = req.seed.unwrap_or_else(rand::random);
    let registry = state.registry.snapshot();
    let lexicon = state.lexicon.snapshot();
    let outcome = state
        .runner
        .run(&req.prompt, seed, &registry, &lexicon)
        .await
        .map_err(|e| match e {
            DuelError::EmptyPrompt => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
            DuelError::Generation { ref persona, .. } => ApiError {
                status: StatusCode::BAD_GATEWAY,
                persona: Some(persona.clone()),
                message: e.to_string(),
            },
            other => internal(other),
        })?;
    match outcome {
        DuelOutcome::Fallback(f) => Ok(Json(FallbackPayload { fallback: f.message }).into_response()),
        DuelOutcome::Duel(d) => {
            state.duels.insert(d.duel_id.clone(), d.model_names());
            let payload = DuelPayload {
                duel_id: d.duel_id,
                prompt: d.prompt,
                dimension: d.dimension,
                seed,
                created_at: d.created_at.to_rfc3339_opts(SecondsFormat::Millis, true),
                responses: d
                    .responses
                    .into_iter()
                    .map(|r| ResponseCard {
                        model_name: r.model_name,
                        text: r.text,
                    })
                    .collect(),
            };
            Ok(Json(payload).into_response())
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingRequest {
    pub duel_id: String,
    #[serde(rename = "modelName")]
    pub model_name: String,
    pub rating: i64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct RatingCreated {
    #[serde(rename = "documentID")]
    pub document_id: String,
    #[serde(rename = "ratingName")]
    pub rating_name: String,
}

async fn rating(
    State(state): State<Shared>,
    body: Result<Json<RatingRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<RatingCreated>), ApiError> {
    let Json(req) = body?;
    let registry = state.registry.snapshot();
    let st = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        st.ratings
            .record(&req.model_name, req.rating, Some(&req.duel_id), &registry, &st.duels)
    })
    .await
    .map_err(internal)?;
    match result {
        Ok(entry) => Ok((
            StatusCode::CREATED,
            Json(RatingCreated {
                document_id: entry.document_id,
                rating_name: entry.rating_name,
            }),
        )),
        Err(e @ RatingError::UnknownDuel(_)) => Err(ApiError::new(StatusCode::NOT_FOUND, e.to_string())),
        Err(RatingError::Store(e)) => Err(internal(e)),
        Err(e) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
    }
}

async fn current_summary(state: &Shared) -> Result<AnalyticsSummary, ApiError> {
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let entries = st.ratings.snapshot()?;
        Ok::<_, biasgpt_core::rating::StoreError>(summary_with(&entries, st.clock.as_ref(), &[]))
    })
    .await
    .map_err(internal)?
    .map_err(internal)
}

async fn analytics(State(state): State<Shared>) -> Result<Json<AnalyticsSummary>, ApiError> {
    current_summary(&state).await.map(Json)
}

async fn plot(State(state): State<Shared>) -> Result<Json<PlotData>, ApiError> {
    current_summary(&state).await.map(|s| Json(s.plot_data()))
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PersonaEntry {
    pub variant: PersonaVariant,
    pub display_name: String,
    pub dimension: BiasDimension,
}

async fn personas(State(state): State<Shared>) -> Json<Vec<PersonaEntry>> {
    let reg = state.registry.snapshot();
    Json(
        reg.specs()
            .iter()
            .map(|s| PersonaEntry {
                variant: s.variant,
                display_name: s.display_name.clone(),
                dimension: s.dimension,
            })
            .collect(),
    )
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ScaleLevel {
    pub value: u8,
    pub label: String,
}

async fn scale() -> Json<Vec<ScaleLevel>> {
    Json(
        BiasRating::all()
            .map(|r| ScaleLevel {
                value: r.value(),
                label: r.label().to_string(),
            })
            .collect(),
    )
}

async fn reload(State(state): State<Shared>) -> Result<Json<serde_json::Value>, ApiError> {
    let done = state
        .reload()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    Ok(Json(json!({ "reloaded": done })))
}

async fn health(State(state): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "engine": state.runner.engine().kind(),
    }))
}
