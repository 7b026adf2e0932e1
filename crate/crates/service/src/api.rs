//! HTTP API over a shared [`Session`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use loadrank::controller::CurtailmentEvent;
use loadrank::domain::{Building, CriteriaConfig, Timestamp};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::session::{CriteriaView, FitSource, Session, SessionError};

pub type SharedSession = Arc<Mutex<Session>>;

pub struct ApiError(StatusCode, String);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("invalid JSON body: {e}")))
}

fn lock(s: &SharedSession) -> MutexGuard<'_, Session> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

fn ok<T: serde::Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

pub fn router(session: SharedSession) -> Router {
    Router::new()
        .route("/api/building", get(get_building).post(post_building))
        .route("/api/models/fit", post(fit_models))
        .route("/api/ranking", get(ranking))
        .route("/api/criteria", put(put_criteria).get(get_criteria))
        .route("/api/simulation/start", post(start))
        .route("/api/simulation/stop", post(stop))
        .route("/api/simulation/state", get(state))
        .route("/api/simulation/advance", post(advance))
        .route("/api/events", post(schedule_event))
        .route("/api/events/{id}/report", get(event_report))
        .route("/api/timeseries", get(timeseries))
        .with_state(session)
}

async fn get_building(State(s): State<SharedSession>) -> ApiResult {
    ok(lock(&s).building().clone())
}

async fn post_building(State(s): State<SharedSession>, body: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|e| bad_request(e.to_string()))?;
    let building = Building::from_json(text).map_err(|e| bad_request(e.to_string()))?;
    let mut session = lock(&s);
    session.set_building(building)?;
    ok(session.building().clone())
}

#[derive(Deserialize)]
struct GenerateRequest {
    generate_days: u32,
    #[serde(default)]
    seed: u64,
}

/// Body is a snapshot CSV, a JSON `{generate_days, seed}` request, or empty
/// to fit on the session's own log.
async fn fit_models(State(s): State<SharedSession>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let text = std::str::from_utf8(&body).map_err(|e| bad_request(e.to_string()))?;
    let source = if text.trim().is_empty() {
        FitSource::Log
    } else if is_json || text.trim_start().starts_with('{') {
        let req: GenerateRequest = parse_body(&body)?;
        FitSource::Generate {
            days: req.generate_days,
            seed: req.seed,
        }
    } else {
        FitSource::Csv { text: text.to_string() }
    };
    // Generating a training log takes seconds; keep it off the async workers.
    let s2 = s.clone();
    let summary = tokio::task::spawn_blocking(move || lock(&s2).fit(source))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    ok(summary)
}

#[derive(Deserialize)]
struct RankingQuery {
    horizon_min: Option<u32>,
}

async fn ranking(State(s): State<SharedSession>, Query(q): Query<RankingQuery>) -> ApiResult {
    ok(lock(&s).ranking(q.horizon_min)?)
}

async fn get_criteria(State(s): State<SharedSession>) -> ApiResult {
    ok(CriteriaView::from(lock(&s).criteria()))
}

async fn put_criteria(State(s): State<SharedSession>, body: Bytes) -> ApiResult {
    let view: CriteriaView = parse_body(&body)?;
    ok(lock(&s).set_criteria(view)?)
}

async fn start(State(s): State<SharedSession>) -> ApiResult {
    ok(lock(&s).start()?)
}

async fn stop(State(s): State<SharedSession>) -> ApiResult {
    ok(lock(&s).stop()?)
}

async fn state(State(s): State<SharedSession>) -> ApiResult {
    ok(lock(&s).state())
}

#[derive(Deserialize)]
struct AdvanceRequest {
    #[serde(default = "one")]
    steps: usize,
}

fn one() -> usize {
    1
}

async fn advance(State(s): State<SharedSession>, body: Bytes) -> ApiResult {
    let req: AdvanceRequest = if body.is_empty() { AdvanceRequest { steps: 1 } } else { parse_body(&body)? };
    ok(lock(&s).advance(req.steps)?)
}

#[derive(Deserialize)]
struct EventRequest {
    start: Value,
    end: Value,
    target_reduction_w: Option<f64>,
    #[serde(default)]
    criteria: Option<CriteriaConfig>,
}

fn timestamp_value(v: &Value, field: &str) -> Result<Timestamp, ApiError> {
    let parsed = match v {
        Value::Number(n) => n.as_i64().map(Timestamp),
        Value::String(s) => Timestamp::parse(s),
        _ => None,
    };
    parsed.ok_or_else(|| bad_request(format!("'{field}' must be seconds or an ISO-8601 time")))
}

async fn schedule_event(State(s): State<SharedSession>, body: Bytes) -> ApiResult {
    let req: EventRequest = parse_body(&body)?;
    let event = CurtailmentEvent {
        start: timestamp_value(&req.start, "start")?,
        end: timestamp_value(&req.end, "end")?,
        target_reduction_w: req.target_reduction_w,
        criteria: req.criteria,
    };
    let view = lock(&s).schedule_event(event)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn event_report(State(s): State<SharedSession>, Path(id): Path<String>) -> ApiResult {
    let id: u64 = id.parse().map_err(|_| ApiError(StatusCode::NOT_FOUND, format!("no event {id}")))?;
    ok(lock(&s).event_report(id)?)
}

async fn timeseries(
    State(s): State<SharedSession>,
    headers: HeaderMap,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let time = |key: &str| -> Result<Option<Timestamp>, ApiError> {
        q.get(key)
            .map(|v| Timestamp::parse(v).ok_or_else(|| bad_request(format!("bad '{key}' time '{v}'"))))
            .transpose()
    };
    let from = time("from")?;
    let to = time("to")?;
    let fields: Option<Vec<String>> = q
        .get("fields")
        .map(|f| f.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect());
    let (columns, rows) = lock(&s).timeseries(from, to, fields.as_deref())?;
    let wants_csv = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/csv"));
    if wants_csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["timestamp".to_string()];
        head.extend(columns.iter().cloned());
        let csv_err = |e: csv::Error| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
        w.write_record(&head).map_err(csv_err)?;
        for (t, vals) in &rows {
            let mut rec = vec![t.to_iso8601()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        return Ok(([(header::CONTENT_TYPE, "text/csv")], bytes).into_response());
    }
    let out: Vec<Value> = rows
        .into_iter()
        .map(|(t, vals)| {
            let mut obj = serde_json::Map::new();
            obj.insert("timestamp".into(), Value::String(t.to_iso8601()));
            for (c, v) in columns.iter().zip(vals) {
                obj.insert(c.clone(), json!(v));
            }
            Value::Object(obj)
        })
        .collect();
    ok(out)
}
