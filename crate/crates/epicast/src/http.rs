//! JSON HTTP API over the artifact store.
//!
//! Read endpoints return stored artifacts byte for byte. `POST /scenario`
//! runs a mobility what-if against the stored fit, with a small pool of
//! concurrent scenario runs.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::NaiveDate;
use epicast_core::calibrate::FitArtifact;
use epicast_core::scenarios::{run_scenario, ScenarioSpec};
use epicast_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::store::{to_json_bytes, ArtifactKind, ArtifactMeta, ArtifactStore};

pub const SCENARIO_WORKERS: usize = 4;

#[derive(Clone)]
pub struct AppState {
    pub store: ArtifactStore,
    pub scenario_slots: Arc<Semaphore>,
}

impl AppState {
    pub fn new(store: ArtifactStore) -> Self {
        Self {
            store,
            scenario_slots: Arc::new(Semaphore::new(SCENARIO_WORKERS)),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/geo-units", get(geo_units))
        .route("/forecast/{geo_id}", get(|s, p| artifact(s, p, ArtifactKind::Forecast)))
        .route("/risk/{geo_id}", get(|s, p| artifact(s, p, ArtifactKind::Risk)))
        .route("/analytics/{geo_id}", get(|s, p| artifact(s, p, ArtifactKind::Analytics)))
        .route("/scenario", post(scenario))
        .with_state(state)
}

/// One field-level problem in a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Validation(Vec<FieldError>),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(geo_id) => (
                StatusCode::NOT_FOUND,
                json!({"error": "not_found", "message": format!("unknown geo_id `{geo_id}`"), "geo_id": geo_id}),
            ),
            ApiError::Validation(fields) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "validation", "message": "invalid scenario request", "fields": fields}),
            ),
            ApiError::Internal(message) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({"error": "internal", "message": message}),
            ),
        };
        (status, axum::Json(body)).into_response()
    }
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn healthz() -> Response {
    json_bytes(b"{\"status\":\"ok\"}\n".to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoUnitEntry {
    pub geo_id: String,
    pub artifacts: BTreeMap<ArtifactKind, ArtifactMeta>,
}

async fn geo_units(State(state): State<AppState>) -> Result<Response, ApiError> {
    let store = state.store.clone();
    let entries = tokio::task::spawn_blocking(move || -> anyhow::Result<Vec<GeoUnitEntry>> {
        Ok(store
            .units()?
            .into_iter()
            .map(|geo_id| GeoUnitEntry {
                artifacts: store.meta(&geo_id).artifacts,
                geo_id,
            })
            .collect())
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(json_bytes(to_json_bytes(&entries).map_err(|e| ApiError::Internal(e.to_string()))?))
}

async fn artifact(State(state): State<AppState>, Path(geo_id): Path<String>, kind: ArtifactKind) -> Result<Response, ApiError> {
    match state.store.get_bytes(&geo_id, kind) {
        Ok(Some(bytes)) => Ok(json_bytes(bytes)),
        Ok(None) => Err(ApiError::NotFound(geo_id)),
        Err(e) => Err(ApiError::Internal(e.to_string())),
    }
}

/// Body of `POST /scenario`, mirroring the CLI flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRequest {
    pub geo_id: String,
    /// Mobility change in percent.
    pub adjust: f64,
    pub from: NaiveDate,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl ScenarioRequest {
    pub fn spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            geo_id: self.geo_id.clone(),
            adjustment: self.adjust,
            adjustment_date: self.from,
            horizon: self.horizon,
            label: self.label.clone(),
        }
    }

    /// Parse a request body, naming every missing or malformed field.
    pub fn parse(body: &[u8]) -> Result<Self, Vec<FieldError>> {
        let err = |field: &str, reason: &str| FieldError {
            field: field.into(),
            reason: reason.into(),
        };
        let value: Value = serde_json::from_slice(body).map_err(|e| vec![err("body", &format!("not JSON: {e}"))])?;
        let Some(obj) = value.as_object() else {
            return Err(vec![err("body", "expected a JSON object")]);
        };
        let mut errors = Vec::new();
        let geo_id = match obj.get("geo_id").and_then(Value::as_str) {
            Some(s) if !s.is_empty() => Some(s.to_string()),
            _ => {
                errors.push(err("geo_id", "required non-empty string"));
                None
            }
        };
        let adjust = match obj.get("adjust").and_then(Value::as_f64) {
            Some(v) => Some(v),
            None => {
                errors.push(err("adjust", "required number (percent)"));
                None
            }
        };
        let from = match obj.get("from").and_then(Value::as_str).map(str::parse::<NaiveDate>) {
            Some(Ok(d)) => Some(d),
            _ => {
                errors.push(err("from", "required ISO-8601 date"));
                None
            }
        };
        let horizon = match obj.get("horizon").and_then(Value::as_u64) {
            Some(h) if h >= 1 => Some(h as usize),
            _ => {
                errors.push(err("horizon", "required positive integer"));
                None
            }
        };
        let label = match obj.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                errors.push(err("label", "must be a string"));
                None
            }
        };
        match (geo_id, adjust, from, horizon) {
            (Some(geo_id), Some(adjust), Some(from), Some(horizon)) if errors.is_empty() => Ok(Self {
                geo_id,
                adjust,
                from,
                horizon,
                label,
            }),
            _ => Err(errors),
        }
    }
}

/// Request field name for a scenario spec field.
fn request_field(field: &str) -> &str {
    match field {
        "adjustment" => "adjust",
        "adjustment_date" => "from",
        other => other,
    }
}

/// Run a scenario and encode it exactly as the CLI writes it.
pub fn scenario_bytes(spec: &ScenarioSpec, fit: &FitArtifact) -> Result<Vec<u8>, ApiError> {
    match run_scenario(spec, fit) {
        Ok(result) => to_json_bytes(&result).map_err(|e| ApiError::Internal(e.to_string())),
        Err(CoreError::InvalidScenario { field, reason }) => Err(ApiError::Validation(vec![FieldError {
            field: request_field(field).into(),
            reason,
        }])),
        Err(e) => Err(ApiError::Internal(e.to_string())),
    }
}

async fn scenario(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request = ScenarioRequest::parse(&body).map_err(ApiError::Validation)?;
    let _permit = state
        .scenario_slots
        .acquire()
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let store = state.store.clone();
    let bytes = tokio::task::spawn_blocking(move || {
        if store.get_bytes(&request.geo_id, ArtifactKind::Fit).ok().flatten().is_none() {
            return Err(ApiError::NotFound(request.geo_id.clone()));
        }
        let fit: FitArtifact = store
            .get(&request.geo_id, ArtifactKind::Fit)
            .map_err(|e| ApiError::Internal(format!("{e:#}")))?;
        scenario_bytes(&request.spec(), &fit)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(json_bytes(bytes))
}

/// Serve until the process is stopped.
pub async fn serve(store: ArtifactStore, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(store))).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names_bad_fields() {
        let ok = ScenarioRequest::parse(br#"{"geo_id":"g","adjust":-7,"from":"2020-10-26","horizon":60}"#).unwrap();
        assert_eq!(ok.adjust, -7.0);
        let errs = ScenarioRequest::parse(br#"{"geo_id":"g","adjust":"x","horizon":0}"#).unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, vec!["adjust", "from", "horizon"]);
        assert_eq!(ScenarioRequest::parse(b"[1]").unwrap_err()[0].field, "body");
        assert_eq!(ScenarioRequest::parse(b"{").unwrap_err()[0].field, "body");
    }
}
