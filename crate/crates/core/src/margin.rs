//! Margin factors, marginal availability and trade approval.
//!
//! A margin account holds capital `C` and invested amounts `w_k`. With
//! portfolio VaR `v` at tail level `alpha` and tolerated availability drop
//! `h C`, the margin factor is `a = v / (h + v)` and the marginal
//! availability is `M = C - a W`, `W = sum w_k`. A trade is allowed iff the
//! recomputed `M` is non-negative.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::book::{Instrument, MarginPolicy, Position};
use crate::derivatives::option_return_scenarios;
use crate::error::{Result, RiskError};
use crate::risk::{
    es_empirical, es_normal_z, tail_warning, var_empirical, var_normal_z, NormalParams, RiskMethod, RiskReport,
    TailLevel,
};
use crate::scenario::{sample, NormalModel, ScenarioSet};

/// Market inputs shared by every valuation.
#[derive(Debug, Clone, Copy)]
pub struct Market<'a> {
    pub model: &'a NormalModel,
    /// Historical joint returns, required by [`RiskMethod::Historical`].
    pub history: Option<&'a ScenarioSet>,
    /// Last close per asset, used to price options.
    pub spots: &'a HashMap<String, f64>,
}

/// Rounds a currency amount to 4 decimals.
pub fn round_money(x: f64) -> f64 {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// `a = VaR / (h + VaR)`. A negative VaR is treated as 0.
pub fn margin_factor(var: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(RiskError::InvalidParameter(format!("h must be positive, got {h}")));
    }
    if var.is_nan() {
        return Err(RiskError::InvalidParameter("VaR is NaN".into()));
    }
    if var == f64::INFINITY {
        return Ok(1.0);
    }
    let v = var.max(0.0);
    Ok(v / (h + v))
}

/// `M = C - a W`.
pub fn availability(capital: f64, invested: f64, a: f64) -> f64 {
    capital - a * invested
}

/// Weighted average of single-asset margin factors, weights `w_k / sum w`.
pub fn per_asset_margin(vars: &[f64], amounts: &[f64], h: f64) -> Result<f64> {
    if vars.len() != amounts.len() {
        return Err(RiskError::DimensionMismatch { expected: vars.len(), got: amounts.len() });
    }
    if amounts.is_empty() || amounts.iter().any(|w| !(*w > 0.0)) {
        return Err(RiskError::InvalidParameter("amounts must be positive".into()));
    }
    let total: f64 = amounts.iter().sum();
    let mut acc = 0.0;
    for (v, w) in vars.iter().zip(amounts) {
        acc += w / total * margin_factor(*v, h)?;
    }
    Ok(acc)
}

/// Simple returns of every position across a scenario set, one column per
/// position. Options are fully revalued over `holding_days`.
pub fn position_returns(
    positions: &[Position],
    scenarios: &ScenarioSet,
    spots: &HashMap<String, f64>,
    holding_days: u32,
) -> Result<Vec<Vec<f64>>> {
    positions
        .iter()
        .map(|p| {
            let id = p.instrument.underlying();
            let j = scenarios.index_of(id).ok_or_else(|| RiskError::UnknownAsset(id.to_owned()))?;
            let underlying = scenarios.column(j);
            match &p.instrument {
                Instrument::Asset(_) => Ok(underlying),
                Instrument::Option(terms) => {
                    let spot = spots.get(id).copied().ok_or_else(|| RiskError::UnknownAsset(id.to_owned()))?;
                    option_return_scenarios(&terms.to_spec()?, spot, &underlying, holding_days)
                }
            }
        })
        .collect()
}

/// `sum_k x_k r_k` per scenario.
fn combine(columns: &[Vec<f64>], x: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (col, xk) in columns.iter().zip(x) {
        for (o, r) in out.iter_mut().zip(col) {
            *o += xk * r;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub position: String,
    pub weight: f64,
}

/// How a risk figure is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskQuery {
    pub alpha: TailLevel,
    pub method: RiskMethod,
    pub horizon_days: u32,
    pub seed: u64,
    pub scenarios: usize,
    /// Explicit normal quantile replacing `q_{1-alpha}`.
    pub z_override: Option<f64>,
}

impl RiskQuery {
    /// One-day query under a margin policy.
    pub fn from_policy(policy: &MarginPolicy) -> Self {
        Self {
            alpha: policy.alpha,
            method: policy.method,
            horizon_days: 1,
            seed: policy.seed,
            scenarios: policy.scenarios,
            z_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioRisk {
    #[serde(flatten)]
    pub report: RiskReport,
    pub invested: f64,
    pub weights: Vec<Weight>,
    /// Monte Carlo scenarios or historical observations behind the figures.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_scenarios: Option<usize>,
    pub warnings: Vec<String>,
}

/// VaR and ES of the invested portfolio `x^T R`, `x = w / W`, as return
/// fractions. Multi-day horizons scale the normal law by `(T, sqrt T)` and
/// empirical one-day figures by `sqrt T`.
pub fn portfolio_risk(positions: &[Position], query: &RiskQuery, market: &Market) -> Result<PortfolioRisk> {
    if query.horizon_days == 0 {
        return Err(RiskError::InvalidParameter("horizon must be at least one day".into()));
    }
    let invested: f64 = positions.iter().map(|p| p.amount).sum();
    let held: Vec<&Position> = positions.iter().filter(|p| p.amount > 0.0).collect();
    let weights: Vec<Weight> =
        held.iter().map(|p| Weight { position: p.instrument.label(), weight: p.amount / invested }).collect();
    let x: Vec<f64> = weights.iter().map(|w| w.weight).collect();
    let mut warnings = Vec::new();
    let report = |var: f64, es: f64| RiskReport {
        alpha: query.alpha,
        horizon_days: query.horizon_days,
        var,
        es,
        method: query.method,
    };
    let t = f64::from(query.horizon_days);
    if held.is_empty() {
        return Ok(PortfolioRisk { report: report(0.0, 0.0), invested, weights, n_scenarios: None, warnings });
    }
    let has_options = held.iter().any(|p| matches!(p.instrument, Instrument::Option(_)));

    if query.method == RiskMethod::Normal && !has_options {
        let mut exposure = vec![0.0; market.model.dim()];
        for (p, xk) in held.iter().zip(&x) {
            let id = p.instrument.underlying();
            let j = market.model.index_of(id).ok_or_else(|| RiskError::UnknownAsset(id.to_owned()))?;
            exposure[j] += xk;
        }
        let one_day = market.model.portfolio_params(&exposure)?;
        let p = NormalParams { mu: one_day.mu * t, sigma: one_day.sigma * t.sqrt() };
        let z = query.z_override.unwrap_or_else(|| query.alpha.z());
        let (var, es) = (var_normal_z(p, z), es_normal_z(p, query.alpha, z));
        return Ok(PortfolioRisk { report: report(var, es), invested, weights, n_scenarios: None, warnings });
    }

    let sampled;
    let scenarios = match query.method {
        RiskMethod::Historical => {
            market.history.ok_or_else(|| RiskError::ScenarioUnavailable("no historical returns loaded".into()))?
        }
        RiskMethod::Normal | RiskMethod::MonteCarlo => {
            if query.method == RiskMethod::Normal {
                warnings.push(format!(
                    "option positions are not normal: VaR estimated from {} Monte Carlo scenarios",
                    query.scenarios
                ));
            }
            sampled = sample(market.model, query.scenarios, query.seed)?;
            &sampled
        }
    };
    let owned: Vec<Position> = held.iter().map(|p| (*p).clone()).collect();
    let columns = position_returns(&owned, scenarios, market.spots, 1)?;
    let rp = combine(&columns, &x, scenarios.n_scenarios());
    warnings.extend(tail_warning(rp.len(), query.alpha));
    let (var, es) = (var_empirical(&rp, query.alpha)?, es_empirical(&rp, query.alpha)?);
    Ok(PortfolioRisk {
        report: report(var * t.sqrt(), es * t.sqrt()),
        invested,
        weights,
        n_scenarios: Some(rp.len()),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Allowed,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginAccount {
    pub capital: f64,
    pub positions: Vec<Position>,
    pub margin_factor: f64,
    pub availability: f64,
}

impl MarginAccount {
    pub fn invested(&self) -> f64 {
        self.positions.iter().map(|p| p.amount).sum()
    }

    /// Account holding `positions`, evaluated as a single trade from cash.
    pub fn open(capital: f64, positions: &[Position], policy: &MarginPolicy, market: &Market) -> Result<TradeEvaluation> {
        if !(capital > 0.0) {
            return Err(RiskError::InvalidParameter(format!("capital must be positive, got {capital}")));
        }
        let cash = Self { capital, positions: Vec::new(), margin_factor: 0.0, availability: capital };
        evaluate_trade(&cash, positions, policy, market)
    }

    /// Adds the day's profit and loss `w^T R` to capital. Invested amounts
    /// are left as booked.
    pub fn mark_to_market(&self, position_returns: &[f64]) -> Result<Self> {
        if position_returns.len() != self.positions.len() {
            return Err(RiskError::DimensionMismatch { expected: self.positions.len(), got: position_returns.len() });
        }
        let pnl: f64 = self.positions.iter().zip(position_returns).map(|(p, r)| p.amount * r).sum();
        Ok(Self { capital: round_money(self.capital + pnl), ..self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeEvaluation {
    pub verdict: Verdict,
    pub margin_factor: f64,
    pub availability: f64,
    pub var: f64,
    pub es: f64,
    pub invested: f64,
    pub weights: Vec<Weight>,
    /// Positions after the trade, with option terms resolved.
    pub positions: Vec<Position>,
    pub warnings: Vec<String>,
}

impl TradeEvaluation {
    pub fn allowed(&self) -> bool {
        self.verdict == Verdict::Allowed
    }

    /// Account state after executing the trade, currency rounded to 4 decimals.
    pub fn committed(&self, capital: f64) -> MarginAccount {
        MarginAccount {
            capital,
            positions: self
                .positions
                .iter()
                .map(|p| Position { amount: round_money(p.amount), ..p.clone() })
                .collect(),
            margin_factor: self.margin_factor,
            availability: round_money(self.availability),
        }
    }
}

fn merge(book: &mut Vec<Position>, p: Position) {
    match book.iter_mut().find(|q| q.instrument == p.instrument && q.leverage == p.leverage) {
        Some(q) => q.amount += p.amount,
        None => book.push(p),
    }
}

/// Recomputes VaR, margin factor and availability with `proposed` added to
/// the account. Pure: the account is not modified.
pub fn evaluate_trade(
    account: &MarginAccount,
    proposed: &[Position],
    policy: &MarginPolicy,
    market: &Market,
) -> Result<TradeEvaluation> {
    policy.validate()?;
    let mut book = account.positions.clone();
    for p in proposed {
        if !(p.amount >= 0.0) || !p.amount.is_finite() {
            return Err(RiskError::InvalidParameter(format!("trade amount must be non-negative, got {}", p.amount)));
        }
        let resolved = p.resolve(market.model, market.spots)?;
        if p.amount > 0.0 {
            merge(&mut book, resolved);
        }
    }
    let risk = portfolio_risk(&book, &RiskQuery::from_policy(policy), market)?;
    let mut warnings = risk.warnings;
    if risk.report.var < 0.0 {
        warnings.push(format!("portfolio VaR {} is negative: margin factor set to 0", risk.report.var));
    }
    let a = margin_factor(risk.report.var, policy.h)?;
    let m = availability(account.capital, risk.invested, a);
    Ok(TradeEvaluation {
        verdict: if m >= 0.0 { Verdict::Allowed } else { Verdict::Denied },
        margin_factor: a,
        availability: m,
        var: risk.report.var,
        es: risk.report.es,
        invested: risk.invested,
        weights: risk.weights,
        positions: book,
        warnings,
    })
}

/// End-of-day distribution of an account over joint return scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct EodScenarios {
    /// `M = (1 - a) w^T R + C - a w^T 1`.
    pub availability: Vec<f64>,
    /// Marked capital `C + w^T R`.
    pub capital: Vec<f64>,
}

pub fn eod_availability_scenarios(
    account: &MarginAccount,
    scenarios: &ScenarioSet,
    spots: &HashMap<String, f64>,
) -> Result<EodScenarios> {
    let columns = position_returns(&account.positions, scenarios, spots, 1)?;
    let amounts: Vec<f64> = account.positions.iter().map(|p| p.amount).collect();
    let pnl = combine(&columns, &amounts, scenarios.n_scenarios());
    let a = account.margin_factor;
    let base = account.capital - a * account.invested();
    Ok(EodScenarios {
        availability: pnl.iter().map(|g| (1.0 - a) * g + base).collect(),
        capital: pnl.iter().map(|g| account.capital + g).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::{OptionTerms, Strike};
    use crate::derivatives::OptionKind;
    use crate::scenario::Provenance;

    fn policy(alpha: f64, h: f64, method: RiskMethod) -> MarginPolicy {
        MarginPolicy { alpha: TailLevel::new(alpha).unwrap(), h, method, seed: 7, scenarios: 20_000 }
    }

    #[test]
    fn margin_goldens() {
        assert!((margin_factor(0.0804, 0.2).unwrap() - 0.2867).abs() < 5e-4);
        assert!((margin_factor(0.0663, 0.2).unwrap() - 0.2491).abs() < 5e-4);
        assert!((availability(10_000.0, 45_000.0, 0.2378) + 701.0).abs() < 1.0);
        let m = availability(10_000.0, 30_000.0, margin_factor(0.0804, 0.2).unwrap());
        assert!((m - 1399.0).abs() < 3.0, "{m}");
        let m = availability(10_000.0, 40_000.0, margin_factor(0.0663, 0.2).unwrap());
        assert!((m - 38.0).abs() < 6.0, "{m}");
    }

    #[test]
    fn margin_factor_edges() {
        assert_eq!(margin_factor(0.0, 0.2).unwrap(), 0.0);
        assert_eq!(margin_factor(-0.01, 0.2).unwrap(), 0.0);
        assert!(margin_factor(1e12, 0.2).unwrap() > 1.0 - 1e-12);
        assert_eq!(margin_factor(f64::INFINITY, 0.2).unwrap(), 1.0);
        assert!(margin_factor(0.1, 0.0).is_err());
        assert!(margin_factor(f64::NAN, 0.1).is_err());
        assert_eq!(availability(5.0, 100.0, 0.0), 5.0);
    }

    #[test]
    fn per_asset_aggregate() {
        // a_k = 0.2 and 0.4 at h = 1 come from VaR 0.25 and 2/3.
        let a = per_asset_margin(&[0.25, 2.0 / 3.0], &[50.0, 50.0], 1.0).unwrap();
        assert!((a - 0.3).abs() < 1e-15);
        assert_eq!(per_asset_margin(&[0.1], &[7.0], 0.2).unwrap(), margin_factor(0.1, 0.2).unwrap());
        assert!(per_asset_margin(&[0.1], &[0.0], 0.2).is_err());
        assert!(per_asset_margin(&[0.1, 0.2], &[1.0], 0.2).is_err());
    }

    fn two_asset_market() -> (NormalModel, HashMap<String, f64>) {
        let model = NormalModel::new(
            vec!["A".into(), "B".into()],
            vec![0.0, 0.0],
            vec![vec![4e-4, 1e-4], vec![1e-4, 9e-4]],
        )
        .unwrap();
        let spots = HashMap::from([("A".to_string(), 10.0), ("B".to_string(), 20.0)]);
        (model, spots)
    }

    #[test]
    fn trade_matches_hand_computation() {
        let (model, spots) = two_asset_market();
        let market = Market { model: &model, history: None, spots: &spots };
        let pol = policy(0.01, 0.2, RiskMethod::Normal);
        let opened = MarginAccount::open(1_000.0, &[Position::asset("A", 2_000.0)], &pol, &market).unwrap();
        let account = opened.committed(1_000.0);
        let eval = evaluate_trade(&account, &[Position::asset("B", 2_000.0)], &pol, &market).unwrap();
        let sigma = (0.25f64 * 4e-4 + 0.25 * 9e-4 + 0.5 * 1e-4).sqrt();
        let var = pol.alpha.z() * sigma;
        let a = var / (0.2 + var);
        assert!((eval.var - var).abs() < 1e-15);
        assert!((eval.margin_factor - a).abs() < 1e-15);
        assert!((eval.availability - (1_000.0 - a * 4_000.0)).abs() < 1e-9);
        assert_eq!(eval.weights.len(), 2);
        assert_eq!(eval.allowed(), eval.availability >= 0.0);
    }

    #[test]
    fn zero_trade_is_identity_and_merge_adds() {
        let (model, spots) = two_asset_market();
        let market = Market { model: &model, history: None, spots: &spots };
        let pol = policy(0.01, 0.2, RiskMethod::Normal);
        let account = MarginAccount::open(1_000.0, &[Position::asset("A", 2_000.0)], &pol, &market)
            .unwrap()
            .committed(1_000.0);
        let same = evaluate_trade(&account, &[Position::asset("B", 0.0)], &pol, &market).unwrap();
        assert_eq!(same.margin_factor, account.margin_factor);
        assert_eq!(round_money(same.availability), account.availability);
        assert_eq!(same.positions, account.positions);
        let more = evaluate_trade(&account, &[Position::asset("A", 500.0)], &pol, &market).unwrap();
        assert_eq!(more.positions, vec![Position::asset("A", 2_500.0)]);
        assert_eq!(more.margin_factor, account.margin_factor);
        assert!(evaluate_trade(&account, &[Position::asset("Z", 1.0)], &pol, &market).is_err());
        assert!(evaluate_trade(&account, &[Position::asset("A", -1.0)], &pol, &market).is_err());
    }

    #[test]
    fn tiny_capital_is_denied() {
        let (model, spots) = two_asset_market();
        let market = Market { model: &model, history: None, spots: &spots };
        let eval = MarginAccount::open(1.0, &[Position::asset("A", 1_000.0)], &policy(0.01, 0.2, RiskMethod::Normal), &market)
            .unwrap();
        assert_eq!(eval.verdict, Verdict::Denied);
    }

    #[test]
    fn historical_needs_data() {
        let (model, spots) = two_asset_market();
        let market = Market { model: &model, history: None, spots: &spots };
        let err = MarginAccount::open(1.0, &[Position::asset("A", 1.0)], &policy(0.01, 0.2, RiskMethod::Historical), &market);
        assert!(matches!(err, Err(RiskError::ScenarioUnavailable(_))));

        let history = ScenarioSet::new(
            vec!["A".into(), "B".into()],
            vec![-0.05, 0.0, -0.03, 0.0, 0.01, 0.0, 0.02, 0.0, 0.0, 0.0],
            Provenance::Historical,
        )
        .unwrap();
        let market = Market { model: &model, history: Some(&history), spots: &spots };
        let eval = MarginAccount::open(1e6, &[Position::asset("A", 1.0)], &policy(0.2, 0.1, RiskMethod::Historical), &market)
            .unwrap();
        assert_eq!(eval.var, 0.05);
        assert!((eval.margin_factor - 0.05 / 0.15).abs() < 1e-15);
    }

    #[test]
    fn normal_method_with_options_falls_back_to_simulation() {
        let (model, spots) = two_asset_market();
        let market = Market { model: &model, history: None, spots: &spots };
        let put = OptionTerms {
            underlying: "A".into(),
            kind: OptionKind::Put,
            strike: Strike::Keyword("last".into()),
            expiry_years: 0.5,
            rate: 0.1,
            vol_annual: None,
        };
        let eval = MarginAccount::open(
            1e6,
            &[Position::asset("A", 1_000.0), Position::option(put, 100.0)],
            &policy(0.01, 0.2, RiskMethod::Normal),
            &market,
        )
        .unwrap();
        assert_eq!(eval.warnings.len(), 1);
        let Instrument::Option(resolved) = &eval.positions[1].instrument else { panic!() };
        assert_eq!(resolved.strike, Strike::Price(10.0));
        let unhedged =
            MarginAccount::open(1e6, &[Position::asset("A", 1_000.0)], &policy(0.01, 0.2, RiskMethod::MonteCarlo), &market)
                .unwrap();
        assert!(eval.var < unhedged.var);
    }

    #[test]
    fn eod_forms() {
        let (model, spots) = two_asset_market();
        let zeros = ScenarioSet::new(vec!["A".into(), "B".into()], vec![0.0; 8], Provenance::Imported).unwrap();
        // Fully invested: C = a W.
        let account = MarginAccount {
            capital: 250.0,
            positions: vec![Position::asset("A", 600.0), Position::asset("B", 400.0)],
            margin_factor: 0.25,
            availability: 0.0,
        };
        let eod = eod_availability_scenarios(&account, &zeros, &spots).unwrap();
        assert!(eod.availability.iter().all(|m| m.abs() < 1e-12));
        assert_eq!(eod.capital, vec![250.0; 4]);

        let s = sample(&model, 1000, 1).unwrap();
        let eod = eod_availability_scenarios(&account, &s, &spots).unwrap();
        for (row, m) in s.rows().zip(&eod.availability) {
            let xr = 0.6 * row[0] + 0.4 * row[1];
            assert!((m - 250.0 * 3.0 * xr).abs() < 1e-9);
        }
        let full = MarginAccount { margin_factor: 1.0, ..account };
        let eod = eod_availability_scenarios(&full, &s, &spots).unwrap();
        assert!(eod.availability.iter().all(|m| (m - (250.0 - 1000.0)).abs() < 1e-9));
    }

    #[test]
    fn mark_to_market_moves_capital_only() {
        let account = MarginAccount {
            capital: 100.0,
            positions: vec![Position::asset("A", 50.0), Position::asset("B", 50.0)],
            margin_factor: 0.1,
            availability: 90.0,
        };
        let next = account.mark_to_market(&[0.1, -0.02]).unwrap();
        assert_eq!(next.capital, 104.0);
        assert_eq!(next.positions, account.positions);
        assert!(account.mark_to_market(&[0.1]).is_err());
    }

    #[test]
    fn money_rounding() {
        assert_eq!(round_money(1399.33649), 1399.3365);
        assert_eq!(round_money(-700.96314), -700.9631);
        assert_eq!(round_money(-0.00001), 0.0);
        assert!(round_money(-0.00001).is_sign_positive());
    }
}
