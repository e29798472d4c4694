//! HTTP front end over the shared [`Engine`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use smarthangar_core::decision::DecisionError;
use smarthangar_core::engine::{EvaluateRequest, RetrainRequest};
use smarthangar_core::ingest::{DefaultTransport, ReferenceMonth, Transport};
use smarthangar_core::store::{HangarProfile, StoreError};
use smarthangar_core::time::parse_rfc3339;
use smarthangar_core::{Engine, EngineError, FeatureSummary};

/// JSON error body shared by every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody { error: error.into(), message: message.into(), field: None, missing: Vec::new() },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::MissingProfile => StatusCode::CONFLICT,
            EngineError::InvalidProfile(_) | EngineError::InsufficientData(_) => StatusCode::UNPROCESSABLE_ENTITY,
            EngineError::NoSnapshot => StatusCode::NOT_FOUND,
            EngineError::BadRequest(_) => StatusCode::BAD_REQUEST,
            EngineError::Decision(DecisionError::UntrainedModel) => StatusCode::SERVICE_UNAVAILABLE,
            EngineError::Decision(_) => StatusCode::UNPROCESSABLE_ENTITY,
            EngineError::Store(StoreError::StorageUnavailable(_)) => StatusCode::SERVICE_UNAVAILABLE,
            EngineError::Store(StoreError::BadRange) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut err = ApiError::new(status, e.kind(), e.to_string());
        match e {
            EngineError::InvalidProfile(p) => err.body.field = Some(p.field.to_string()),
            EngineError::InsufficientData(missing) => err.body.missing = missing,
            _ => {}
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs blocking engine work off the async workers.
async fn blocking<T, F>(engine: &Arc<Engine>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    let engine = Arc::clone(engine);
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ingest/metar", post(ingest_metar))
        .route("/ingest/pollution", post(ingest_pollution))
        .route("/ingest/series", post(ingest_series))
        .route("/hangar/profile", put(put_profile).get(get_profile))
        .route("/evaluate", post(evaluate))
        .route("/risk/timeline", get(timeline))
        .route("/recommendations", get(recommendations))
        .route("/model/retrain", post(retrain))
        .with_state(engine)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_fingerprint: String,
    pub rules_version: String,
    pub risk_model_version: String,
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<Health> {
    let model = engine.model();
    Json(Health {
        status: "ok".into(),
        model_fingerprint: model.tree.fingerprint.clone(),
        rules_version: model.rules.version.clone(),
        risk_model_version: engine.risk_model().version.clone(),
    })
}

#[derive(Debug, Default, Deserialize)]
struct MonthQuery {
    /// `YYYY-MM` the day-of-month stamps refer to; defaults to the current month.
    month: Option<String>,
}

fn parse_month(text: &str) -> Option<ReferenceMonth> {
    let (y, m) = text.split_once('-')?;
    ReferenceMonth::new(y.parse().ok()?, m.parse().ok()?)
}

async fn ingest_metar(
    State(engine): State<Arc<Engine>>,
    Query(q): Query<MonthQuery>,
    body: String,
) -> ApiResult<smarthangar_core::engine::IngestReport> {
    let month = match q.month.as_deref() {
        Some(m) => Some(parse_month(m).ok_or_else(|| ApiError::bad_request(format!("bad month `{m}`")))?),
        None => None,
    };
    blocking(&engine, move |e| e.ingest_metar(&body, month)).await.map(Json)
}

async fn ingest_pollution(
    State(engine): State<Arc<Engine>>,
    body: String,
) -> ApiResult<smarthangar_core::engine::IngestReport> {
    blocking(&engine, move |e| e.ingest_pollution(&body)).await.map(Json)
}

async fn ingest_series(
    State(engine): State<Arc<Engine>>,
    body: String,
) -> ApiResult<smarthangar_core::engine::IngestReport> {
    blocking(&engine, move |e| e.ingest_series(&body)).await.map(Json)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileVersion {
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionedProfile {
    pub version: u64,
    pub profile: HangarProfile,
}

fn json_body<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    if body.trim().is_empty() {
        return Err(ApiError::bad_request("empty body"));
    }
    serde_json::from_str(body).map_err(|e| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad-document", e.to_string())
    })
}

async fn put_profile(State(engine): State<Arc<Engine>>, body: String) -> ApiResult<ProfileVersion> {
    let profile: HangarProfile = json_body(&body)?;
    let version = blocking(&engine, move |e| e.put_profile(&profile)).await?;
    Ok(Json(ProfileVersion { version }))
}

async fn get_profile(State(engine): State<Arc<Engine>>) -> ApiResult<VersionedProfile> {
    match blocking(&engine, |e| e.profile()).await {
        Ok((version, profile)) => Ok(Json(VersionedProfile { version, profile })),
        Err(err) if err.status == StatusCode::CONFLICT => {
            Err(ApiError::new(StatusCode::NOT_FOUND, "missing-profile", "no hangar profile"))
        }
        Err(err) => Err(err),
    }
}

/// Evaluation result: the feature summary plus the handle of the stored
/// snapshot whose risk series `/risk/timeline` serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub handle: String,
    pub persisted: bool,
    pub features: FeatureSummary,
    pub risk: smarthangar_core::engine::RiskSummary,
    pub ma_window_hours: u32,
    pub notes: Vec<String>,
}

async fn evaluate(State(engine): State<Arc<Engine>>, body: String) -> ApiResult<EvaluateResponse> {
    let request: EvaluateRequest = json_body(&body)?;
    let persisted = !request.overrides.dry_run;
    let snapshot = blocking(&engine, move |e| e.evaluate(&request)).await?;
    Ok(Json(EvaluateResponse {
        handle: snapshot.handle(),
        persisted,
        features: snapshot.features,
        risk: snapshot.risk,
        ma_window_hours: snapshot.ma_window_hours,
        notes: snapshot.notes,
    }))
}

#[derive(Debug, Default, Deserialize)]
struct RangeQuery {
    from: Option<String>,
    to: Option<String>,
}

async fn timeline(
    State(engine): State<Arc<Engine>>,
    Query(q): Query<RangeQuery>,
) -> ApiResult<Vec<smarthangar_core::engine::TimelinePoint>> {
    let parse = |v: Option<String>| match v {
        Some(s) => parse_rfc3339(&s).map(Some).ok_or_else(|| ApiError::bad_request(format!("bad timestamp `{s}`"))),
        None => Ok(None),
    };
    let (from, to) = (parse(q.from)?, parse(q.to)?);
    blocking(&engine, move |e| e.timeline(from, to)).await.map(Json)
}

async fn recommendations(State(engine): State<Arc<Engine>>) -> ApiResult<smarthangar_core::Recommendation> {
    let rec = blocking(&engine, |e| e.recommend()).await?;
    tracing::info!(fingerprint = %rec.model_fingerprint, "recommendation served");
    Ok(Json(rec))
}

async fn retrain(
    State(engine): State<Arc<Engine>>,
    body: String,
) -> ApiResult<smarthangar_core::engine::RetrainOutcome> {
    let request: RetrainRequest = if body.trim().is_empty() { RetrainRequest::default() } else { json_body(&body)? };
    let outcome = blocking(&engine, move |e| e.retrain(&request)).await?;
    tracing::info!(from = %outcome.previous_fingerprint, to = %outcome.fingerprint, "model swapped");
    Ok(Json(outcome))
}

/// Spawns feed polling and periodic evaluation as configured.
pub fn spawn_schedules(engine: Arc<Engine>, transport: Arc<dyn Transport>) {
    let config = engine.config().clone();
    if config.schedule.poll_feeds {
        for feed in config.feeds.clone() {
            let engine = Arc::clone(&engine);
            let transport = Arc::clone(&transport);
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(Duration::from_secs(feed.cadence_minutes * 60));
                loop {
                    tick.tick().await;
                    let (engine, transport, feed) = (Arc::clone(&engine), Arc::clone(&transport), feed.clone());
                    let result = tokio::task::spawn_blocking(move || {
                        engine.poll_feed(transport.as_ref(), &feed, Utc::now())
                    })
                    .await;
                    match result {
                        Ok(Ok(stored)) => tracing::info!(stored, "feed polled"),
                        Ok(Err(e)) => tracing::warn!(error = %e, "feed poll failed"),
                        Err(e) => tracing::warn!(error = %e, "feed task failed"),
                    }
                }
            });
        }
    }
    if let (Some(every), Some(period)) = (config.schedule.evaluate_every_minutes, config.schedule.evaluate_period_hours) {
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(every * 60));
            loop {
                tick.tick().await;
                let engine = Arc::clone(&engine);
                let result = tokio::task::spawn_blocking(move || {
                    let to = Utc::now();
                    engine.evaluate(&EvaluateRequest::new(to - chrono::Duration::hours(period as i64), to))
                })
                .await;
                match result {
                    Ok(Ok(s)) => tracing::info!(category = %s.risk.corrosivity.category, "scheduled evaluation"),
                    Ok(Err(e)) => tracing::warn!(error = %e, "scheduled evaluation failed"),
                    Err(e) => tracing::warn!(error = %e, "evaluation task failed"),
                }
            }
        });
    }
}

/// Binds the configured address and serves until the process ends.
pub async fn serve(engine: Arc<Engine>) -> std::io::Result<()> {
    let addr: SocketAddr = engine
        .config()
        .listen
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("listen address: {e}")))?;
    spawn_schedules(Arc::clone(&engine), Arc::new(DefaultTransport));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(engine)).await
}
