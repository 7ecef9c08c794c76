use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use levmargin_core::book::{referenced_assets, MarginPolicy, Position, Trade};
use levmargin_core::dataset::MarketData;
use levmargin_core::leverage::LeverageObjective;
use levmargin_core::margin::{evaluate_trade, round_money, MarginAccount, RiskQuery};
use levmargin_core::market_data::load_prices;
use levmargin_core::risk::{RiskMethod, TailLevel};
use levmargin_core::RiskError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ops::{self, LeverageCriterion, SimulateRequest, TradeView};
use crate::store::{AccountView, Event, PortfolioRecord, Store, StoreError};

pub type Shared = Arc<RwLock<Store>>;

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self { status, error, message: message.into(), line: None }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", format!("no portfolio `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

fn risk_kind(e: &RiskError) -> (StatusCode, &'static str) {
    use RiskError::*;
    let bad = StatusCode::BAD_REQUEST;
    let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
    let conflict = StatusCode::CONFLICT;
    match e {
        MalformedRow { .. } => (bad, "MalformedRow"),
        NonPositivePrice { .. } => (bad, "NonPositivePrice"),
        DuplicateDate { .. } => (bad, "DuplicateDate"),
        SeriesTooShort(_) => (conflict, "SeriesTooShort"),
        NoCommonDates => (conflict, "NoCommonDates"),
        MixedKinds => (bad, "MixedKinds"),
        InvalidTailLevel(_) => (bad, "InvalidTailLevel"),
        InvalidParameter(_) => (bad, "InvalidParameter"),
        InvalidDistribution(_) => (bad, "InvalidDistribution"),
        EmptySample => (conflict, "EmptySample"),
        InsufficientData(_) => (conflict, "InsufficientData"),
        NotPositiveSemidefinite { .. } => (unprocessable, "NotPositiveSemidefinite"),
        DimensionMismatch { .. } => (bad, "DimensionMismatch"),
        ExpiredWithinHorizon { .. } => (unprocessable, "ExpiredWithinHorizon"),
        ZeroOptionPrice => (unprocessable, "ZeroOptionPrice"),
        NoRoot { .. } => (unprocessable, "NoRoot"),
        NonMonotoneGap => (unprocessable, "NonMonotoneGap"),
        Infeasible(_) => (unprocessable, "Infeasible"),
        UnboundedObjective => (unprocessable, "UnboundedObjective"),
        NoConvergence(_) => (unprocessable, "NoConvergence"),
        UnknownAsset(_) => (unprocessable, "UnknownAsset"),
        ScenarioUnavailable(_) => (conflict, "ScenarioUnavailable"),
        ScenarioFormat(_) => (bad, "ScenarioFormat"),
    }
}

impl From<RiskError> for ApiError {
    fn from(e: RiskError) -> Self {
        let (status, kind) = risk_kind(&e);
        let line = match &e {
            RiskError::MalformedRow { line, .. }
            | RiskError::NonPositivePrice { line, .. }
            | RiskError::DuplicateDate { line, .. } => Some(*line),
            _ => None,
        };
        Self { status, error: kind, message: e.to_string(), line }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Storage", e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn market_for<'a>(
    store: &Store,
    positions: impl IntoIterator<Item = &'a Position>,
    window: Option<usize>,
) -> ApiResult<MarketData> {
    Ok(MarketData::for_assets(store.series(), &referenced_assets(positions), window)?)
}

fn record<'a>(store: &'a Store, id: &str) -> ApiResult<&'a PortfolioRecord> {
    store.state().portfolios.get(id).ok_or_else(|| ApiError::not_found(id))
}

fn read(shared: &Shared) -> std::sync::RwLockReadGuard<'_, Store> {
    shared.read().unwrap_or_else(|e| e.into_inner())
}

fn write(shared: &Shared) -> std::sync::RwLockWriteGuard<'_, Store> {
    shared.write().unwrap_or_else(|e| e.into_inner())
}

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/v1/spec", get(spec))
        .route("/v1/assets/{asset_id}/prices", put(upload_prices))
        .route("/v1/portfolios", post(create_portfolio))
        .route("/v1/portfolios/{id}", get(get_portfolio))
        .route("/v1/portfolios/{id}/risk", get(risk_report))
        .route("/v1/portfolios/{id}/whatif", post(whatif))
        .route("/v1/portfolios/{id}/trades", post(commit_trade))
        .route("/v1/portfolios/{id}/policy", put(change_policy))
        .route("/v1/portfolios/{id}/leverage/max", get(leverage_max))
        .route("/v1/portfolios/{id}/leverage/optimize", post(leverage_optimize))
        .route("/v1/portfolios/{id}/simulate", post(simulate))
        .with_state(store)
}

async fn upload_prices(State(s): State<Shared>, Path(asset_id): Path<String>, body: String) -> ApiResult<StatusCode> {
    load_prices(body.as_bytes(), &asset_id)?;
    let mut store = write(&s);
    if store.state().prices.get(&asset_id) != Some(&body) {
        store.append(None, Event::PricesLoaded { asset_id, csv: body })?;
    }
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    owner: String,
    capital: f64,
    #[serde(default)]
    positions: Vec<Position>,
    policy: MarginPolicy,
}

async fn create_portfolio(State(s): State<Shared>, Json(req): Json<CreateRequest>) -> ApiResult<Response> {
    req.policy.validate()?;
    let mut store = write(&s);
    let id = req.id.unwrap_or_else(|| format!("p{}", store.state().portfolios.len() + 1));
    if store.state().portfolios.contains_key(&id) {
        return Err(ApiError::new(StatusCode::CONFLICT, "PortfolioExists", format!("portfolio `{id}` exists")));
    }
    let capital = round_money(req.capital);
    let data = market_for(&store, &req.positions, None)?;
    let eval = MarginAccount::open(capital, &req.positions, &req.policy, &data.market())?;
    if !eval.allowed() {
        return Ok((StatusCode::CONFLICT, Json(TradeView::from(&eval))).into_response());
    }
    let record = PortfolioRecord {
        id: id.clone(),
        owner: req.owner,
        account: AccountView::from(&eval.committed(capital)),
        policy: req.policy,
        version: 1,
    };
    store.append(Some(id), Event::Created { record: record.clone() })?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_portfolio(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<PortfolioRecord>> {
    Ok(Json(record(&read(&s), &id)?.clone()))
}

#[derive(Debug, Default, Deserialize)]
struct RiskParams {
    alpha: Option<f64>,
    horizon_days: Option<u32>,
    method: Option<RiskMethod>,
    seed: Option<u64>,
    scenarios: Option<usize>,
    z_override: Option<f64>,
    window: Option<usize>,
}

async fn risk_report(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RiskParams>,
) -> ApiResult<Json<ops::RiskReportView>> {
    let store = read(&s);
    let rec = record(&store, &id)?;
    let account = rec.account.to_account();
    let query = RiskQuery {
        alpha: q.alpha.map(TailLevel::new).transpose()?.unwrap_or(rec.policy.alpha),
        method: q.method.unwrap_or(rec.policy.method),
        horizon_days: q.horizon_days.unwrap_or(1),
        seed: q.seed.unwrap_or(0),
        scenarios: q.scenarios.unwrap_or(rec.policy.scenarios),
        z_override: q.z_override,
    };
    let data = market_for(&store, &account.positions, q.window)?;
    Ok(Json(ops::risk_report(&account.positions, &query, &data)?))
}

#[derive(Debug, Deserialize)]
struct WhatIfRequest {
    trade: Trade,
}

fn evaluate(store: &Store, rec: &PortfolioRecord, trade: &Trade, policy: &MarginPolicy) -> ApiResult<levmargin_core::margin::TradeEvaluation> {
    let account = rec.account.to_account();
    let data = market_for(store, account.positions.iter().chain(&trade.positions), None)?;
    Ok(evaluate_trade(&account, &trade.positions, policy, &data.market())?)
}

async fn whatif(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<WhatIfRequest>,
) -> ApiResult<Json<TradeView>> {
    let store = read(&s);
    let rec = record(&store, &id)?;
    let eval = evaluate(&store, rec, &req.trade, &rec.policy)?;
    Ok(Json(TradeView::from(&eval)))
}

#[derive(Debug, Deserialize)]
struct CommitRequest {
    trade: Trade,
    expected_version: u64,
}

#[derive(Debug, Serialize)]
struct CommitResponse {
    record: PortfolioRecord,
    evaluation: TradeView,
}

#[derive(Debug, Serialize)]
struct DeniedResponse {
    version: u64,
    evaluation: TradeView,
}

fn check_version(rec: &PortfolioRecord, expected: u64) -> ApiResult<()> {
    if rec.version != expected {
        return Err(ApiError::new(
            StatusCode::PRECONDITION_FAILED,
            "VersionConflict",
            format!("expected version {expected}, current version {}", rec.version),
        ));
    }
    Ok(())
}

async fn commit_trade(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<CommitRequest>,
) -> ApiResult<Response> {
    let mut store = write(&s);
    let rec = record(&store, &id)?.clone();
    check_version(&rec, req.expected_version)?;
    let eval = evaluate(&store, &rec, &req.trade, &rec.policy)?;
    let view = TradeView::from(&eval);
    if !eval.allowed() {
        store.append(
            Some(id),
            Event::TradeDenied {
                trade: req.trade,
                margin_factor: eval.margin_factor,
                availability: crate::money::Money(eval.availability),
                version: rec.version,
            },
        )?;
        return Ok((StatusCode::CONFLICT, Json(DeniedResponse { version: rec.version, evaluation: view })).into_response());
    }
    let account = AccountView::from(&eval.committed(rec.account.capital.0));
    store.append(Some(id.clone()), Event::TradeCommitted { trade: req.trade, account, version: rec.version + 1 })?;
    let record = store.state().portfolios[&id].clone();
    Ok((StatusCode::CREATED, Json(CommitResponse { record, evaluation: view })).into_response())
}

#[derive(Debug, Deserialize)]
struct PolicyRequest {
    policy: MarginPolicy,
    expected_version: u64,
}

async fn change_policy(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<PolicyRequest>,
) -> ApiResult<Json<PortfolioRecord>> {
    req.policy.validate()?;
    let mut store = write(&s);
    let rec = record(&store, &id)?.clone();
    check_version(&rec, req.expected_version)?;
    let eval = evaluate(&store, &rec, &Trade { positions: Vec::new() }, &req.policy)?;
    let account = AccountView::from(&eval.committed(rec.account.capital.0));
    store.append(Some(id.clone()), Event::PolicyChanged { policy: req.policy, account, version: rec.version + 1 })?;
    Ok(Json(store.state().portfolios[&id].clone()))
}

#[derive(Debug, Deserialize)]
struct LeverageParams {
    asset: String,
    alpha: Option<f64>,
    method: Option<LeverageCriterion>,
    h: Option<f64>,
}

async fn leverage_max(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<LeverageParams>,
) -> ApiResult<Json<ops::LeverageMaxView>> {
    let store = read(&s);
    let rec = record(&store, &id)?;
    let account = rec.account.to_account();
    let criterion = q.method.unwrap_or(LeverageCriterion::Var);
    let h = match (criterion, q.h) {
        (_, Some(h)) => h,
        (LeverageCriterion::Var, None) => 0.0,
        (LeverageCriterion::Es, None) => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "InvalidParameter", "method=es requires h"))
        }
    };
    let alpha = q.alpha.map(TailLevel::new).transpose()?.unwrap_or(rec.policy.alpha);
    let portfolio = ops::leveraged_portfolio(&account)?;
    let data = market_for(&store, &account.positions, None)?;
    Ok(Json(ops::leverage_max(&portfolio, &q.asset, criterion, alpha, h, &data)?))
}

#[derive(Debug, Deserialize)]
struct OptimizeRequest {
    objective: LeverageObjective,
    alpha: Option<f64>,
}

async fn leverage_optimize(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<OptimizeRequest>,
) -> ApiResult<Json<ops::OptimizeView>> {
    let store = read(&s);
    let rec = record(&store, &id)?;
    let account = rec.account.to_account();
    let alpha = req.alpha.map(TailLevel::new).transpose()?.unwrap_or(rec.policy.alpha);
    let portfolio = ops::leveraged_portfolio(&account)?;
    let data = market_for(&store, &account.positions, None)?;
    Ok(Json(ops::leverage_optimize(&portfolio, req.objective, alpha, &data)?))
}

async fn simulate(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<SimulateRequest>,
) -> ApiResult<Json<ops::SimulateView>> {
    let store = read(&s);
    let rec = record(&store, &id)?;
    let account = rec.account.to_account();
    let data = market_for(&store, &account.positions, None)?;
    Ok(Json(ops::simulate(&account, &rec.policy, &req, &data)?))
}

async fn spec() -> Json<serde_json::Value> {
    Json(json!({
        "title": "levmargin risk service",
        "version": "1",
        "money": "currency amounts are JSON numbers with exactly 4 decimals",
        "paths": {
            "/v1/assets/{asset_id}/prices": {
                "put": { "body": "text/csv with header date,close", "responses": { "204": "stored", "400": "row-level error {error, message, line}" } }
            },
            "/v1/portfolios": {
                "post": {
                    "body": { "id": "string?", "owner": "string", "capital": "number", "positions": "[Position]", "policy": "MarginPolicy" },
                    "responses": { "201": "PortfolioRecord", "409": "TradeView when the initial book is denied" }
                }
            },
            "/v1/portfolios/{id}": { "get": { "responses": { "200": "PortfolioRecord", "404": "unknown id" } } },
            "/v1/portfolios/{id}/risk": {
                "get": {
                    "query": ["alpha", "horizon_days", "method=normal|historical|monte_carlo", "seed", "scenarios", "z_override", "window"],
                    "responses": { "200": "RiskReport {alpha, horizon_days, var, es, method, model_window, warnings}", "400": "bad parameter", "404": "unknown id", "409": "InsufficientData" }
                }
            },
            "/v1/portfolios/{id}/whatif": {
                "post": { "body": { "trade": { "positions": "[Position]" } }, "responses": { "200": "TradeView {allowed, new_margin_factor, new_availability, portfolio_var, weights}", "422": "UnknownAsset" } }
            },
            "/v1/portfolios/{id}/trades": {
                "post": {
                    "body": { "trade": { "positions": "[Position]" }, "expected_version": "integer" },
                    "responses": { "201": "{record, evaluation}", "409": "{version, evaluation} denied, state unchanged", "412": "VersionConflict" }
                }
            },
            "/v1/portfolios/{id}/policy": {
                "put": { "body": { "policy": "MarginPolicy", "expected_version": "integer" }, "responses": { "200": "PortfolioRecord", "412": "VersionConflict" } }
            },
            "/v1/portfolios/{id}/leverage/max": {
                "get": { "query": ["asset", "alpha", "method=var|es", "h"], "responses": { "200": "{verdict: bounded|rejected|unbounded, l_max?}" } }
            },
            "/v1/portfolios/{id}/leverage/optimize": {
                "post": { "body": { "objective": "max_mean|max_min", "alpha": "number?" }, "responses": { "200": "{leverage, objective_value, constraint_residual, duality_gap}" } }
            },
            "/v1/portfolios/{id}/simulate": {
                "post": {
                    "body": { "method": "monte_carlo|historical", "m": "integer?", "seed": "integer?", "alphas": "[number]?" },
                    "responses": { "200": "{histograms: {availability, portfolio_value} of 101 bins, empirical_quantiles, h_emp, breach_probability}" }
                }
            }
        },
        "schemas": {
            "Position": { "asset": "string", "option": "{underlying, kind: call|put, strike: number|\"last\", expiry_years, rate?, vol_annual?}", "amount": "number", "leverage": "number?" },
            "MarginPolicy": { "alpha": "tail probability in (0, 0.5]", "h": "number > 0", "method": "normal|historical|monte_carlo", "seed": "integer?", "scenarios": "integer?" }
        }
    }))
}
