use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use loadrank::chiller::ChillerModel;
use loadrank::controller::ControllerModels;
use loadrank::domain::{Appliance, Building, Floor, Timestamp, Zone};
use loadrank::emulator::{EmulatorConfig, OccupancySource};
use loadrank::occupancy::OccupancyModel;
use loadrank_service::api::router;
use loadrank_service::session::{Session, SessionConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn twin_building() -> Building {
    let zone = |id: &str| Zone {
        id: id.into(),
        desired_temp_c: 22.0,
        comfort_alpha: 10.0,
        comfort_delta_c: 3.0,
        appliances: vec![
            Appliance::hvac(format!("{id}/hvac")),
            Appliance::dimmable_light(format!("{id}/light"), 700.0),
            Appliance::plug_load(format!("{id}/pc"), 200.0),
        ],
    };
    Building {
        id: "twins".into(),
        floor_area_m2: 500.0,
        floors: vec![Floor {
            id: "F1".into(),
            zones: vec![zone("A"), zone("B")],
        }],
    }
}

fn twin_models(b: &Building) -> ControllerModels {
    let zones = b.zone_ids();
    ControllerModels {
        chiller: ChillerModel::new(zones.clone(), 5000.0, 300.0, vec![-150.0; zones.len()]).unwrap(),
        occupancy: zones.iter().map(|z| OccupancyModel::identity(z.clone(), vec![30, 120])).collect(),
    }
}

fn twin_app() -> Router {
    let b = twin_building();
    let mut cfg = SessionConfig::new(b.clone());
    cfg.emulator = EmulatorConfig {
        occupancy: OccupancySource::Constant { occupied: true },
        start: Timestamp::from_hours(10.0),
        ..EmulatorConfig::default()
    };
    let mut s = Session::new(cfg).unwrap();
    s.set_models(twin_models(&b)).unwrap();
    router(Arc::new(Mutex::new(s)))
}

fn office_app() -> Router {
    router(Arc::new(Mutex::new(
        Session::new(SessionConfig::new(Building::office(1))).unwrap(),
    )))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body.map(|b| b.to_string()), None).await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, v)
}

async fn call_raw(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<String>,
    accept: Option<&str>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    if let Some(a) = accept {
        req = req.header(header::ACCEPT, a);
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

#[tokio::test]
async fn criteria_update_reflects_in_ranking() {
    let app = twin_app();
    let (st, body) = call(&app, "PUT", "/api/criteria", Some(json!({"weights": [0.6, 0.4], "nu": 0.75}))).await;
    assert_eq!(st, StatusCode::OK, "{body}");
    let (st, body) = call(&app, "GET", "/api/ranking", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["criteria"]["weights"], json!([0.6, 0.4]));
    assert_eq!(body["criteria"]["nu"], json!(0.75));

    let (st, _) = call(&app, "PUT", "/api/criteria", Some(json!({"weights": [0.9, 0.1], "nu": 0.8}))).await;
    assert_eq!(st, StatusCode::OK);
    let (_, body) = call(&app, "GET", "/api/ranking", None).await;
    assert_eq!(body["criteria"]["weights"], json!([0.9, 0.1]));
    assert_eq!(body["criteria"]["nu"], json!(0.8));
}

#[tokio::test]
async fn unnormalized_weights_are_rejected() {
    let app = twin_app();
    let (st, body) = call(&app, "PUT", "/api/criteria", Some(json!({"weights": [0.7, 0.4], "nu": 0.75}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("sum"), "{body}");
    let (st, _) = call(&app, "PUT", "/api/criteria", Some(json!({"weights": [0.5, 0.5], "nu": 0.5}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call_raw(&app, "PUT", "/api/criteria", Some("{not json".into()), None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (_, body) = call(&app, "GET", "/api/criteria", None).await;
    assert_eq!(body["weights"], json!([0.6, 0.4]));
}

#[tokio::test]
async fn twin_appliances_get_equal_fitness() {
    let app = twin_app();
    let (st, body) = call(&app, "GET", "/api/ranking?horizon_min=15", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["horizon_min"], json!(15));
    let rows = body["rows"].as_array().unwrap();
    // 10 HVAC offsets, 5 light levels and PC off per zone.
    assert_eq!(rows.len(), 2 * 16);
    let key = |r: &Value| {
        let a = &r["alternative"];
        (
            a["kind"].to_string(),
            a["setting_index"].as_u64().unwrap(),
        )
    };
    let mut pairs = 0;
    for r in rows.iter().filter(|r| r["alternative"]["zone_id"] == "A") {
        let twin = rows
            .iter()
            .find(|o| o["alternative"]["zone_id"] == "B" && key(o) == key(r))
            .unwrap();
        let (fa, fb) = (r["fitness"].as_f64().unwrap(), twin["fitness"].as_f64().unwrap());
        assert!((fa - fb).abs() < 1e-12, "{} {fa} vs {fb}", r["label"]);
        assert_eq!(r["expected_scores"], twin["expected_scores"]);
        assert_eq!(r["occupied_prob"], json!(1.0));
        pairs += 1;
    }
    assert_eq!(pairs, 16);
    // Fitness is sorted best first.
    let f: Vec<f64> = rows.iter().map(|r| r["fitness"].as_f64().unwrap()).collect();
    assert!(f.windows(2).all(|w| w[0] >= w[1]));
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["rank"], json!(i + 1));
    }
}

#[tokio::test]
async fn ranking_is_stable_while_frozen() {
    let app = twin_app();
    let (_, a) = call_raw(&app, "GET", "/api/ranking", None, None).await;
    let (_, b) = call_raw(&app, "GET", "/api/ranking", None, None).await;
    assert_eq!(a, b);
    let (_, _) = call(&app, "GET", "/api/timeseries", None).await;
    let (_, c) = call_raw(&app, "GET", "/api/ranking", None, None).await;
    assert_eq!(a, c);
}

#[tokio::test]
async fn building_round_trip() {
    let app = office_app();
    let b = twin_building();
    let (st, _) = call(&app, "POST", "/api/building", Some(serde_json::to_value(&b).unwrap())).await;
    assert_eq!(st, StatusCode::OK);
    let (st, got) = call(&app, "GET", "/api/building", None).await;
    assert_eq!(st, StatusCode::OK);
    let back: Building = serde_json::from_value(got).unwrap();
    assert_eq!(back, b);

    let mut broken = serde_json::to_value(&b).unwrap();
    broken["floors"][0]["zones"][1]["id"] = json!("A");
    let (st, body) = call(&app, "POST", "/api/building", Some(broken)).await;
    assert_eq!(st, StatusCode::BAD_REQUEST, "{body}");
    let (_, still) = call(&app, "GET", "/api/building", None).await;
    assert_eq!(serde_json::from_value::<Building>(still).unwrap(), b);
}

#[tokio::test]
async fn lifecycle_conflicts_and_unknown_ids() {
    let app = office_app();
    let (st, _) = call(&app, "GET", "/api/ranking", None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call(&app, "POST", "/api/simulation/stop", None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call(&app, "POST", "/api/simulation/advance", Some(json!({"steps": 1}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, body) = call(&app, "POST", "/api/simulation/start", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["running"], json!(true));
    let (st, _) = call(&app, "POST", "/api/simulation/start", None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call(&app, "POST", "/api/building", Some(serde_json::to_value(twin_building()).unwrap())).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call(&app, "GET", "/api/events/7/report", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", "/api/events/nope/report", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "POST", "/api/events", Some(json!({"start": 3600, "end": 7200, "target_reduction_w": null}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
}

#[tokio::test]
async fn event_runs_through_the_session() {
    let app = twin_app();
    let (st, _) = call(&app, "POST", "/api/simulation/start", None).await;
    assert_eq!(st, StatusCode::OK);
    let (st, body) = call(
        &app,
        "POST",
        "/api/events",
        Some(json!({"start": "2024-07-01T10:05:00", "end": 10 * 3600 + 1200, "target_reduction_w": null})),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED, "{body}");
    let id = body["id"].as_u64().unwrap();
    assert_eq!(body["status"], "scheduled");
    let (st, body) = call(&app, "GET", &format!("/api/events/{id}/report"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["status"], "scheduled");
    let (st, _) = call(&app, "POST", "/api/events", Some(json!({"start": 40000, "end": 41000}))).await;
    assert_eq!(st, StatusCode::CONFLICT);

    // 60 s steps: 10:00 to 10:25 covers the event plus its restore interval.
    let (st, body) = call(&app, "POST", "/api/simulation/advance", Some(json!({"steps": 25}))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["log_length"], json!(25));
    assert!(body["active_event"].is_null());
    let (_, body) = call(&app, "GET", &format!("/api/events/{id}/report"), None).await;
    assert_eq!(body["status"], "completed");
    let plans = body["report"]["plans"].as_array().unwrap();
    assert_eq!(plans.len(), 3);
    assert!(body["report"]["mean_achieved_reduction_w"].as_f64().unwrap() > 0.0);

    let (st, rows) = call(&app, "GET", "/api/timeseries?from=36060&to=2024-07-01T10:10:00&fields=total_power_W,occupied_A", None).await;
    assert_eq!(st, StatusCode::OK);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0]["timestamp"], "2024-07-01T10:01:00");
    assert_eq!(rows[0]["occupied_A"], json!(1.0));
    assert_eq!(rows[0].as_object().unwrap().len(), 3);

    let (st, csv) = call_raw(&app, "GET", "/api/timeseries?fields=total_power_W", None, Some("text/csv")).await;
    assert_eq!(st, StatusCode::OK);
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next(), Some("timestamp,total_power_W"));
    assert_eq!(text.lines().count(), 26);

    let (st, _) = call(&app, "GET", "/api/timeseries?fields=bogus", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let (st, body) = call(&app, "POST", "/api/simulation/stop", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["running"], json!(false));
}

#[tokio::test]
async fn stopping_aborts_an_active_event() {
    let app = twin_app();
    call(&app, "POST", "/api/simulation/start", None).await;
    let (_, body) = call(&app, "POST", "/api/events", Some(json!({"start": 36000, "end": 39600, "target_reduction_w": 500.0}))).await;
    let id = body["id"].as_u64().unwrap();
    call(&app, "POST", "/api/simulation/advance", Some(json!({"steps": 3}))).await;
    let (_, state) = call(&app, "GET", "/api/simulation/state", None).await;
    assert_eq!(state["active_event"]["status"], "active");
    assert!(state["snapshot"]["appliances"].as_array().unwrap().iter().any(|a| a["commanded"] == json!(true)));
    call(&app, "POST", "/api/simulation/stop", None).await;
    let (_, body) = call(&app, "GET", &format!("/api/events/{id}/report"), None).await;
    assert_eq!(body["status"], "aborted");
}

#[tokio::test]
async fn models_fit_from_generated_data() {
    let app = office_app();
    let (st, body) = call(&app, "POST", "/api/models/fit", Some(json!({"generate_days": 0, "seed": 1}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST, "{body}");
    let (st, _) = call(&app, "POST", "/api/models/fit", None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, body) = call(&app, "POST", "/api/models/fit", Some(json!({"generate_days": 7, "seed": 3}))).await;
    assert_eq!(st, StatusCode::OK, "{body}");
    assert_eq!(body["beta_z"].as_object().unwrap().len(), 5);
    assert!(body["chiller"]["relative_error"]["within_10pct"].as_f64().unwrap() > 0.5);
    let (st, body) = call(&app, "GET", "/api/ranking", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["rows"].as_array().unwrap().len(), 5 * 16);
    let (st, _) = call_raw(&app, "POST", "/api/models/fit", Some("timestamp,foo\n1,2\n".into()), None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}
