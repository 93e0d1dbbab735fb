//! HTTP API: submit a prompt and get a two-persona duel back, rate the
//! responses, read the analytics.
//!
//! | Method | Path | Success |
//! |---|---|---|
//! | POST | `/api/prompt` | 200, duel or `{"fallback": ..}` |
//! | POST | `/api/rating` | 201, `{"documentID", "ratingName"}` |
//! | GET | `/api/analytics` | 200, summary |
//! | GET | `/api/analytics/plot` | 200, chart series |
//! | GET | `/api/personas` | 200, the eight personas |
//! | GET | `/api/scale` | 200, the ten rating levels |
//! | POST | `/api/admin/reload` | 200, reloads lexicon and registry files |
//! | GET | `/healthz` | 200, version and engine kind |

mod routes;
mod state;

use std::future::Future;
use std::sync::Arc;

use axum::http::HeaderValue;
use axum::Router;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use routes::{
    DuelPayload, FallbackPayload, PersonaEntry, RatingCreated, ResponseCard, ScaleLevel, MAX_PROMPT_CHARS,
};
pub use state::{AppState, DuelCache, ReloadError, ReloadSources, DEFAULT_DUEL_CAPACITY};

/// Origins allowed to call the API from a browser. Empty disables CORS;
/// `*` allows any origin.
#[derive(Debug, Clone, Default)]
pub struct CorsOrigins(pub Vec<String>);

impl CorsOrigins {
    fn layer(&self) -> Option<CorsLayer> {
        if self.0.is_empty() {
            return None;
        }
        let base = CorsLayer::new().allow_methods(Any).allow_headers(Any);
        if self.0.iter().any(|o| o == "*") {
            return Some(base.allow_origin(Any));
        }
        let origins: Vec<HeaderValue> = self.0.iter().filter_map(|o| o.parse().ok()).collect();
        Some(base.allow_origin(AllowOrigin::list(origins)))
    }
}

pub fn app(state: Arc<AppState>, cors: &CorsOrigins) -> Router {
    let router = routes::api(state);
    match cors.layer() {
        Some(layer) => router.layer(layer),
        None => router,
    }
}

/// Serves until `shutdown` resolves, then waits for in-flight requests.
/// Rating appends are durable before their response is sent, so nothing is
/// pending once this returns.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    cors: &CorsOrigins,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app(state, cors))
        .with_graceful_shutdown(shutdown)
        .await
}
