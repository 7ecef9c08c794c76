//! Computations behind the endpoints, shared with the command-line tool so
//! both print the same numbers.

use std::collections::BTreeMap;

use levmargin_core::book::{Instrument, MarginPolicy, Position};
use levmargin_core::dataset::MarketData;
use levmargin_core::leverage::{
    max_leverage_es_sequential, max_leverage_sequential, optimize_leverage, LeverageBound, LeverageObjective,
    LeverageSolution, LeveragedPortfolio,
};
use levmargin_core::margin::{
    eod_availability_scenarios, portfolio_risk, MarginAccount, RiskQuery, TradeEvaluation, Verdict, Weight,
};
use levmargin_core::risk::{empirical_quantile, RiskMethod, TailLevel};
use levmargin_core::scenario::sample;
use levmargin_core::{Result, RiskError};
use serde::{Deserialize, Serialize};

use crate::money::Money;

pub const SCHEMA: u32 = 1;
pub const HISTOGRAM_BINS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReportView {
    pub schema: u32,
    pub alpha: f64,
    pub horizon_days: u32,
    pub var: f64,
    pub es: f64,
    pub method: RiskMethod,
    pub model_window: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_scenarios: Option<usize>,
    pub invested: Money,
    pub var_currency: Money,
    pub es_currency: Money,
    pub weights: Vec<Weight>,
    pub warnings: Vec<String>,
}

/// VaR and ES of the positions, as return fractions and in currency.
pub fn risk_report(positions: &[Position], query: &RiskQuery, data: &MarketData) -> Result<RiskReportView> {
    let market = data.market();
    let resolved = positions.iter().map(|p| p.resolve(market.model, market.spots)).collect::<Result<Vec<_>>>()?;
    let risk = portfolio_risk(&resolved, query, &market)?;
    let mut warnings = data.warnings.clone();
    warnings.extend(risk.warnings);
    Ok(RiskReportView {
        schema: SCHEMA,
        alpha: query.alpha.value(),
        horizon_days: query.horizon_days,
        var: risk.report.var,
        es: risk.report.es,
        method: query.method,
        model_window: data.model.window,
        n_scenarios: risk.n_scenarios,
        invested: Money(risk.invested),
        var_currency: Money(risk.report.var * risk.invested),
        es_currency: Money(risk.report.es * risk.invested),
        weights: risk.weights,
        warnings,
    })
}

/// Outcome of a proposed trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeView {
    pub schema: u32,
    pub allowed: bool,
    pub verdict: Verdict,
    pub portfolio_var: f64,
    pub portfolio_es: f64,
    pub new_margin_factor: f64,
    pub new_availability: Money,
    pub invested: Money,
    pub weights: Vec<Weight>,
    pub warnings: Vec<String>,
}

impl From<&TradeEvaluation> for TradeView {
    fn from(e: &TradeEvaluation) -> Self {
        Self {
            schema: SCHEMA,
            allowed: e.allowed(),
            verdict: e.verdict,
            portfolio_var: e.var,
            portfolio_es: e.es,
            new_margin_factor: e.margin_factor,
            new_availability: Money(e.availability),
            invested: Money(e.invested),
            weights: e.weights.clone(),
            warnings: e.warnings.clone(),
        }
    }
}

/// Asset positions as capital fractions with their leverage factors.
pub fn leveraged_portfolio(account: &MarginAccount) -> Result<LeveragedPortfolio> {
    let mut ids: Vec<String> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut leverage: Vec<f64> = Vec::new();
    for p in &account.positions {
        let Instrument::Asset(id) = &p.instrument else {
            return Err(RiskError::InvalidParameter("leverage limits apply to asset positions only".into()));
        };
        if p.amount <= 0.0 {
            continue;
        }
        match ids.iter().position(|a| a == id) {
            Some(k) => weights[k] += p.amount / account.capital,
            None => {
                ids.push(id.clone());
                weights.push(p.amount / account.capital);
                leverage.push(p.leverage.unwrap_or(1.0));
            }
        }
    }
    LeveragedPortfolio::new(ids, weights, leverage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeverageCriterion {
    Var,
    Es,
}

impl std::str::FromStr for LeverageCriterion {
    type Err = RiskError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "var" => Ok(Self::Var),
            "es" => Ok(Self::Es),
            other => Err(RiskError::InvalidParameter(format!("unknown leverage method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageMaxView {
    pub schema: u32,
    pub asset: String,
    pub method: LeverageCriterion,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub h: f64,
    pub weight: f64,
    #[serde(flatten)]
    pub bound: LeverageBound,
}

/// Sequential bound on `asset` with every other leverage factor held fixed.
pub fn leverage_max(
    portfolio: &LeveragedPortfolio,
    asset: &str,
    criterion: LeverageCriterion,
    alpha: TailLevel,
    h: f64,
    data: &MarketData,
) -> Result<LeverageMaxView> {
    let k = portfolio.asset_ids.iter().position(|a| a == asset).ok_or_else(|| RiskError::UnknownAsset(asset.into()))?;
    let model = reorder(data, &portfolio.asset_ids)?;
    let bound = match criterion {
        LeverageCriterion::Var => max_leverage_sequential(&model, portfolio, k, alpha, h)?,
        LeverageCriterion::Es => max_leverage_es_sequential(&model, portfolio, k, h)?,
    };
    Ok(LeverageMaxView {
        schema: SCHEMA,
        asset: asset.into(),
        method: criterion,
        alpha: (criterion == LeverageCriterion::Var).then(|| alpha.value()),
        h,
        weight: portfolio.weights[k],
        bound,
    })
}

/// The fitted model restricted to and ordered like `ids`.
fn reorder(data: &MarketData, ids: &[String]) -> Result<levmargin_core::scenario::NormalModel> {
    let m = &data.model;
    let idx = ids
        .iter()
        .map(|a| m.index_of(a).ok_or_else(|| RiskError::UnknownAsset(a.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut out = levmargin_core::scenario::NormalModel::new(
        ids.to_vec(),
        idx.iter().map(|&i| m.mu[i]).collect(),
        idx.iter().map(|&i| idx.iter().map(|&j| m.sigma[i][j]).collect()).collect(),
    )?;
    out.window = m.window;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeView {
    pub schema: u32,
    pub objective: LeverageObjective,
    pub alpha: f64,
    pub weights: Vec<f64>,
    #[serde(flatten)]
    pub solution: LeverageSolution,
}

pub fn leverage_optimize(
    portfolio: &LeveragedPortfolio,
    objective: LeverageObjective,
    alpha: TailLevel,
    data: &MarketData,
) -> Result<OptimizeView> {
    let model = reorder(data, &portfolio.asset_ids)?;
    let solution = optimize_leverage(&model, &portfolio.weights, alpha, objective)?;
    Ok(OptimizeView { schema: SCHEMA, objective, alpha: alpha.value(), weights: portfolio.weights.clone(), solution })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: Money,
    pub max: Money,
    pub bin_width: Money,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64]) -> Self {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; HISTOGRAM_BINS];
        if values.is_empty() {
            return Self { min: Money(0.0), max: Money(0.0), bin_width: Money(0.0), counts };
        }
        let width = (max - min) / HISTOGRAM_BINS as f64;
        for v in values {
            let k = if width > 0.0 { ((v - min) / width) as usize } else { 0 };
            counts[k.min(HISTOGRAM_BINS - 1)] += 1;
        }
        Self { min: Money(min), max: Money(max), bin_width: Money(width), counts }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    #[serde(default)]
    pub method: Option<RiskMethod>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Tail levels to report quantiles at; the policy level when absent.
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distributions<T> {
    pub availability: T,
    pub portfolio_value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateView {
    pub schema: u32,
    pub method: RiskMethod,
    pub n_scenarios: usize,
    pub seed: Option<u64>,
    pub capital: Money,
    /// The availability floor `-h C`.
    pub threshold: Money,
    pub histograms: Distributions<Histogram>,
    pub empirical_quantiles: Distributions<BTreeMap<String, Money>>,
    /// `-q_alpha(M) / C` at the policy level.
    pub h_emp: f64,
    /// Share of scenarios with `M <= -h C`.
    pub breach_probability: f64,
}

/// End-of-day distributions of availability and marked capital.
pub fn simulate(
    account: &MarginAccount,
    policy: &MarginPolicy,
    request: &SimulateRequest,
    data: &MarketData,
) -> Result<SimulateView> {
    let method = request.method.unwrap_or(RiskMethod::MonteCarlo);
    let m = request.m.unwrap_or(policy.scenarios);
    let seed = request.seed.unwrap_or(0);
    let sampled;
    let scenarios = match method {
        RiskMethod::Historical => {
            data.history.as_ref().ok_or_else(|| RiskError::ScenarioUnavailable("no historical returns loaded".into()))?
        }
        RiskMethod::Normal | RiskMethod::MonteCarlo => {
            if data.model.dim() == 0 {
                return Err(RiskError::InsufficientData("portfolio holds no positions".into()));
            }
            sampled = sample(&data.model, m, seed)?;
            &sampled
        }
    };
    let eod = eod_availability_scenarios(account, scenarios, &data.spots)?;
    let alphas = match &request.alphas {
        Some(list) => list.iter().map(|a| TailLevel::new(*a)).collect::<Result<Vec<_>>>()?,
        None => vec![policy.alpha],
    };
    let quantiles = |values: &[f64]| -> Result<BTreeMap<String, Money>> {
        alphas.iter().map(|a| Ok((a.value().to_string(), Money(empirical_quantile(values, *a)?)))).collect()
    };
    let threshold = -policy.h * account.capital;
    let q = empirical_quantile(&eod.availability, policy.alpha)?;
    let breaches = eod.availability.iter().filter(|v| **v <= threshold).count();
    Ok(SimulateView {
        schema: SCHEMA,
        method,
        n_scenarios: eod.availability.len(),
        seed: (method != RiskMethod::Historical).then_some(seed),
        capital: Money(account.capital),
        threshold: Money(threshold),
        histograms: Distributions {
            availability: Histogram::new(&eod.availability),
            portfolio_value: Histogram::new(&eod.capital),
        },
        empirical_quantiles: Distributions {
            availability: quantiles(&eod.availability)?,
            portfolio_value: quantiles(&eod.capital)?,
        },
        h_emp: -q / account.capital,
        breach_probability: breaches as f64 / eod.availability.len() as f64,
    })
}
