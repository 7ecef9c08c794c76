use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use levmargin_core::dataset::MarketData;
use levmargin_core::market_data::load_prices;
use levmargin_core::risk::{var_normal, TailLevel};
use levmargin_service::store::replay;
use levmargin_service::{open, router, Shared};
use serde_json::{json, Value};
use tower::ServiceExt;

const ASSETS: [&str; 4] = ["ISP", "IGV", "G", "ENI"];

fn demo_csv(id: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../demo/prices/{id}.csv"))).unwrap()
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", if method == "PUT" && uri.contains("/prices") { "text/csv" } else { "application/json" })
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value, String) {
    let (status, text) = call(app, method, uri, Some(body.to_string())).await;
    let value = serde_json::from_str(&text).unwrap_or(Value::Null);
    (status, value, text)
}

fn policy() -> Value {
    json!({ "alpha": 0.001, "h": 0.2, "method": "normal" })
}

async fn seeded(dir: &Path) -> (Shared, Router) {
    let shared = open(dir).unwrap();
    let app = router(shared.clone());
    for id in ASSETS {
        let (status, _) = call(&app, "PUT", &format!("/v1/assets/{id}/prices"), Some(demo_csv(id))).await;
        assert_eq!(status, StatusCode::NO_CONTENT);
    }
    let (status, _, text) = json_call(
        &app,
        "POST",
        "/v1/portfolios",
        json!({
            "id": "demo",
            "owner": "desk",
            "capital": 10000,
            "positions": [
                { "asset": "ISP", "amount": 6000 },
                { "asset": "IGV", "amount": 21000 },
                { "asset": "G", "amount": 3000 }
            ],
            "policy": policy()
        }),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{text}");
    (shared, app)
}

fn state_bytes(shared: &Shared) -> Vec<u8> {
    shared.read().unwrap().state().canonical()
}

#[tokio::test]
async fn price_upload_contract() {
    let dir = tempfile::tempdir().unwrap();
    let shared = open(dir.path()).unwrap();
    let app = router(shared.clone());
    let (status, _) = call(&app, "PUT", "/v1/assets/X/prices", Some("date,close\n2015-01-02,100.0\n2015-01-05,110.0".into())).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let seq = shared.read().unwrap().state().seq;
    let (status, _) = call(&app, "PUT", "/v1/assets/X/prices", Some("date,close\n2015-01-02,100.0\n2015-01-05,110.0".into())).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert_eq!(shared.read().unwrap().state().seq, seq);
    let (status, body) =
        call(&app, "PUT", "/v1/assets/X/prices", Some("date,close\n2015-01-02,100.0\n2015-01-02,101.0".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["error"], "DuplicateDate");
    assert_eq!(v["line"], 3);
}

#[tokio::test]
async fn walk_through_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (shared, app) = seeded(dir.path()).await;

    let (status, rec, text) = json_call(&app, "GET", "/v1/portfolios/demo", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rec["version"], 1);
    assert!((rec["account"]["margin_factor"].as_f64().unwrap() - 0.2867).abs() < 5e-4);
    assert!(text.contains(r#""capital":10000.0000"#), "{text}");
    assert!(regex_like_money(&text, "availability"));

    let trade = |amount: f64| json!({ "trade": { "positions": [{ "asset": "ENI", "amount": amount }] } });
    let before = state_bytes(&shared);
    let (status, first, first_text) = json_call(&app, "POST", "/v1/portfolios/demo/whatif", trade(10000.0)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["allowed"], true);
    assert!((first["new_margin_factor"].as_f64().unwrap() - 0.2491).abs() < 5e-4);
    assert!((first["portfolio_var"].as_f64().unwrap() - 0.0663).abs() < 1e-6);
    let (_, _, second_text) = json_call(&app, "POST", "/v1/portfolios/demo/whatif", trade(10000.0)).await;
    assert_eq!(first_text, second_text);
    assert_eq!(state_bytes(&shared), before);

    let (_, zero, _) = json_call(&app, "POST", "/v1/portfolios/demo/whatif", trade(0.0)).await;
    assert_eq!(zero["allowed"], true);
    assert_eq!(zero["new_margin_factor"], rec["account"]["margin_factor"]);
    assert_eq!(zero["new_availability"], rec["account"]["availability"]);

    let (status, err, _) = json_call(
        &app,
        "POST",
        "/v1/portfolios/demo/whatif",
        json!({ "trade": { "positions": [{ "asset": "NOPE", "amount": 1 }] } }),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "UnknownAsset");

    let commit = |amount: f64, version: u64| {
        json!({ "trade": { "positions": [{ "asset": "ENI", "amount": amount }] }, "expected_version": version })
    };
    let (status, denied, _) = json_call(&app, "POST", "/v1/portfolios/demo/trades", commit(15000.0, 1)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(denied["version"], 1);
    assert_eq!(denied["evaluation"]["verdict"], "denied");
    let availability = denied["evaluation"]["new_availability"].as_f64().unwrap();
    assert!((availability + 701.0).abs() < 1.0, "{availability}");
    assert_eq!(shared.read().unwrap().state().portfolios["demo"].version, 1);

    let (status, _, _) = json_call(&app, "POST", "/v1/portfolios/demo/trades", commit(10000.0, 7)).await;
    assert_eq!(status, StatusCode::PRECONDITION_FAILED);
    let (status, done, _) = json_call(&app, "POST", "/v1/portfolios/demo/trades", commit(10000.0, 1)).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(done["record"]["version"], 2);
    assert_eq!(done["record"]["account"]["positions"].as_array().unwrap().len(), 4);
    let (status, _, _) = json_call(&app, "POST", "/v1/portfolios/demo/trades", commit(10.0, 1)).await;
    assert_eq!(status, StatusCode::PRECONDITION_FAILED);

    let (status, _, _) = json_call(&app, "GET", "/v1/portfolios/missing", Value::Null).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let live = state_bytes(&shared);
    assert_eq!(replay(dir.path()).unwrap().canonical(), live);
    drop(app);
    drop(shared);
    let reopened = open(dir.path()).unwrap();
    assert_eq!(state_bytes(&reopened), live);
}

fn regex_like_money(text: &str, field: &str) -> bool {
    let key = format!("\"{field}\":");
    let Some(start) = text.find(&key) else { return false };
    let rest = &text[start + key.len()..];
    let number: String = rest.chars().take_while(|c| c.is_ascii_digit() || *c == '.' || *c == '-').collect();
    number.split_once('.').is_some_and(|(_, frac)| frac.len() == 4)
}

#[tokio::test]
async fn risk_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = seeded(dir.path()).await;
    let (status, report, _) = json_call(&app, "GET", "/v1/portfolios/demo/risk?alpha=0.05&method=normal", Value::Null).await;
    assert_eq!(status, StatusCode::OK, "{report}");

    let series: Vec<_> = ["G", "IGV", "ISP"].iter().map(|id| load_prices(demo_csv(id).as_bytes(), id).unwrap()).collect();
    let data = MarketData::from_series(&series, None).unwrap();
    let x = [0.1, 0.7, 0.2];
    let expected = var_normal(data.model.portfolio_params(&x).unwrap(), TailLevel::new(0.05).unwrap());
    assert!((report["var"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(report["model_window"], 750);
    assert_eq!(report["schema"], 1);

    let (status, _, _) = json_call(&app, "GET", "/v1/portfolios/demo/risk?alpha=0", Value::Null).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, hist, _) =
        json_call(&app, "GET", "/v1/portfolios/demo/risk?alpha=0.01&method=historical&window=10", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert!(hist["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("n·α < 1")));
    let (status, mc, _) =
        json_call(&app, "GET", "/v1/portfolios/demo/risk?alpha=0.05&method=monte_carlo&scenarios=200000&seed=3", Value::Null)
            .await;
    assert_eq!(status, StatusCode::OK);
    assert!((mc["var"].as_f64().unwrap() / expected - 1.0).abs() < 0.02);
    let (status, ten, _) =
        json_call(&app, "GET", "/v1/portfolios/demo/risk?alpha=0.05&horizon_days=10", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert!((ten["var"].as_f64().unwrap() - expected * 10f64.sqrt()).abs() < 1e-3);
}

#[tokio::test]
async fn leverage_and_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = seeded(dir.path()).await;
    let (status, max, _) =
        json_call(&app, "GET", "/v1/portfolios/demo/leverage/max?asset=IGV&alpha=0.01", Value::Null).await;
    assert_eq!(status, StatusCode::OK, "{max}");
    assert_eq!(max["verdict"], "bounded");
    assert!(max["l_max"].as_f64().unwrap() >= 1.0);
    let (status, es, _) =
        json_call(&app, "GET", "/v1/portfolios/demo/leverage/max?asset=IGV&method=es&h=0.01", Value::Null).await;
    assert_eq!(status, StatusCode::OK, "{es}");
    let (status, _, _) = json_call(&app, "GET", "/v1/portfolios/demo/leverage/max?asset=IGV&method=es", Value::Null).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, opt, _) =
        json_call(&app, "POST", "/v1/portfolios/demo/leverage/optimize", json!({ "objective": "max_min", "alpha": 0.01 }))
            .await;
    assert_eq!(status, StatusCode::OK, "{opt}");
    assert_eq!(opt["leverage"].as_array().unwrap().len(), 3);
    assert!(opt["constraint_residual"].as_f64().unwrap() <= 1e-6);

    let (status, sim, text) = json_call(
        &app,
        "POST",
        "/v1/portfolios/demo/simulate",
        json!({ "method": "monte_carlo", "m": 20000, "seed": 1, "alphas": [0.001, 0.01] }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{text}");
    assert_eq!(sim["histograms"]["availability"]["counts"].as_array().unwrap().len(), 101);
    assert_eq!(sim["histograms"]["portfolio_value"]["counts"].as_array().unwrap().len(), 101);
    assert_eq!(sim["empirical_quantiles"]["availability"].as_object().unwrap().len(), 2);
    assert_eq!(sim["threshold"].as_f64().unwrap(), -2000.0);
    let (_, again, _) = json_call(
        &app,
        "POST",
        "/v1/portfolios/demo/simulate",
        json!({ "method": "monte_carlo", "m": 20000, "seed": 1, "alphas": [0.001, 0.01] }),
    )
    .await;
    assert_eq!(sim, again);
    let (status, hist, _) = json_call(&app, "POST", "/v1/portfolios/demo/simulate", json!({ "method": "historical" })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(hist["n_scenarios"], 750);
}

#[tokio::test]
async fn policy_change_bumps_version() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = seeded(dir.path()).await;
    let (status, rec, _) = json_call(
        &app,
        "PUT",
        "/v1/portfolios/demo/policy",
        json!({ "policy": { "alpha": 0.01, "h": 0.2, "method": "normal" }, "expected_version": 1 }),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rec["version"], 2);
    assert!(rec["account"]["margin_factor"].as_f64().unwrap() < 0.2867);
    let (status, _, _) =
        json_call(&app, "PUT", "/v1/portfolios/demo/policy", json!({ "policy": policy(), "expected_version": 1 })).await;
    assert_eq!(status, StatusCode::PRECONDITION_FAILED);
}

#[tokio::test]
async fn denied_creation_and_spec() {
    let dir = tempfile::tempdir().unwrap();
    let (shared, app) = seeded(dir.path()).await;
    let (status, body, _) = json_call(
        &app,
        "POST",
        "/v1/portfolios",
        json!({ "capital": 1, "positions": [{ "asset": "IGV", "amount": 1000 }], "policy": policy() }),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["allowed"], false);
    assert_eq!(shared.read().unwrap().state().portfolios.len(), 1);
    let (status, spec, _) = json_call(&app, "GET", "/v1/spec", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert!(spec["paths"]["/v1/portfolios/{id}/whatif"].is_object());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_whatif_never_mutates() {
    let dir = tempfile::tempdir().unwrap();
    let (shared, app) = seeded(dir.path()).await;
    let before = state_bytes(&shared);
    let mut tasks = Vec::new();
    for k in 0..32 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let body = json!({ "trade": { "positions": [{ "asset": "ENI", "amount": 1000 * k }] } });
            json_call(&app, "POST", "/v1/portfolios/demo/whatif", body).await.0
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    assert_eq!(state_bytes(&shared), before);
}
