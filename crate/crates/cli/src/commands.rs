use std::path::PathBuf;

use clap::{Args, ValueEnum};
use levmargin_core::book::{referenced_assets, MarginPolicy, PortfolioFile, Trade};
use levmargin_core::dataset::MarketData;
use levmargin_core::leverage::{
    delta_quantile_check, max_leverage_es_single, max_leverage_single, LeverageBound, LeverageObjective,
    LeveragedPortfolio,
};
use levmargin_core::margin::{
    eod_availability_scenarios, evaluate_trade, round_money, MarginAccount, RiskQuery, TradeEvaluation, Verdict,
};
use levmargin_core::risk::{empirical_quantile, tail_warning, var_normal, NormalParams, RiskMethod, TailLevel};
use levmargin_core::scenario::{fit_normal, fit_warning, ScenarioSet};
use levmargin_service::money::Money;
use levmargin_service::ops::{self, LeverageCriterion, OptimizeView, RiskReportView, TradeView, SCHEMA};
use serde::Serialize;

use crate::input::{read_json, read_portfolio, read_price_dir, Failure, Source};

fn tail_level(alpha: Option<f64>, default: TailLevel) -> Result<TailLevel, Failure> {
    Ok(alpha.map(TailLevel::new).transpose()?.unwrap_or(default))
}

fn policy_with(file: &PortfolioFile, alpha: Option<f64>, h: Option<f64>) -> Result<MarginPolicy, Failure> {
    let mut policy = file.policy.clone();
    policy.alpha = tail_level(alpha, policy.alpha)?;
    policy.h = h.unwrap_or(policy.h);
    policy.validate()?;
    Ok(policy)
}

#[derive(Debug, Clone, Args)]
pub struct RiskArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long)]
    pub portfolio: PathBuf,
    /// Tail level; the portfolio policy level when omitted.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, default_value_t = 1)]
    pub horizon: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// Fixed quantile used in place of the exact normal quantile.
    #[arg(long)]
    pub z_override: Option<f64>,
    /// Fit on the last N common observations only.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Normal,
    Historical,
    MonteCarlo,
}

impl From<Method> for RiskMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Normal => RiskMethod::Normal,
            Method::Historical => RiskMethod::Historical,
            Method::MonteCarlo => RiskMethod::MonteCarlo,
        }
    }
}

pub fn risk(args: &RiskArgs) -> Result<RiskReportView, Failure> {
    let file = read_portfolio(&args.portfolio)?;
    let query = RiskQuery {
        alpha: tail_level(args.alpha, file.policy.alpha)?,
        method: args.method.map_or(file.policy.method, RiskMethod::from),
        horizon_days: args.horizon,
        seed: args.seed,
        scenarios: args.scenarios.unwrap_or(file.policy.scenarios),
        z_override: args.z_override,
    };
    let data = args.source.market(&referenced_assets(&file.positions), args.window)?;
    Ok(ops::risk_report(&file.positions, &query, &data)?)
}

#[derive(Debug, Clone, Args)]
pub struct MarginArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long)]
    pub portfolio: PathBuf,
    /// Proposed trade `{positions: [...]}`; without it the portfolio itself is checked.
    #[arg(long)]
    pub trade: Option<PathBuf>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginView {
    pub schema: u32,
    pub var: f64,
    pub es: f64,
    pub a_star: f64,
    pub availability: Money,
    pub invested: Money,
    pub verdict: Verdict,
    pub warnings: Vec<String>,
}

impl From<&TradeView> for MarginView {
    fn from(t: &TradeView) -> Self {
        Self {
            schema: SCHEMA,
            var: t.portfolio_var,
            es: t.portfolio_es,
            a_star: t.new_margin_factor,
            availability: t.new_availability,
            invested: t.invested,
            verdict: t.verdict,
            warnings: t.warnings.clone(),
        }
    }
}

pub fn margin(args: &MarginArgs) -> Result<MarginView, Failure> {
    let file = read_portfolio(&args.portfolio)?;
    let policy = policy_with(&file, args.alpha, args.h)?;
    let capital = round_money(file.capital);
    let data = args.source.market(&referenced_assets(&file.positions), None)?;
    let opened = MarginAccount::open(capital, &file.positions, &policy, &data.market())?;
    let eval: TradeEvaluation = match &args.trade {
        None => opened,
        Some(path) => {
            let trade: Trade = read_json(path)?;
            let account = opened.committed(capital);
            let data = args.source.market(&referenced_assets(account.positions.iter().chain(&trade.positions)), None)?;
            evaluate_trade(&account, &trade.positions, &policy, &data.market())?
        }
    };
    Ok(MarginView::from(&TradeView::from(&eval)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Each asset alone.
    Single,
    /// Each asset in turn with the other factors fixed.
    Sequential,
    /// Jointly optimal factors.
    Optimize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Criterion {
    Var,
    Es,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Objective {
    MaxMean,
    MaxMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Args)]
pub struct LeverageArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long)]
    pub portfolio: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Loss threshold as a fraction of capital; required for `--criterion es`.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, value_enum, default_value = "var")]
    pub criterion: Criterion,
    #[arg(long, value_enum, default_value = "max-mean")]
    pub objective: Objective,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum RowValue {
    Bound(LeverageBound),
    Optimal { l_star: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeverageRow {
    pub asset: String,
    pub w: f64,
    #[serde(flatten)]
    pub value: RowValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeverageTable {
    pub schema: u32,
    pub mode: Mode,
    pub alpha: f64,
    pub h: f64,
    pub rows: Vec<LeverageRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<OptimizeView>,
}

impl LeverageTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.asset.len()).max().unwrap_or(0).max(5);
        let head = if self.mode == Mode::Optimize { "l*" } else { "l_max" };
        let mut out = format!("{:<width$}  {:>8}  {:>12}\n", "asset", "w", head);
        for r in &self.rows {
            let value = match &r.value {
                RowValue::Bound(LeverageBound::Bounded { l_max }) => format!("{l_max:.4}"),
                RowValue::Bound(LeverageBound::Rejected { .. }) => "rejected".into(),
                RowValue::Bound(LeverageBound::Unbounded) => "unbounded".into(),
                RowValue::Optimal { l_star } => format!("{l_star:.4}"),
            };
            out.push_str(&format!("{:<width$}  {:>8.4}  {:>12}\n", r.asset, r.w, value));
        }
        out
    }
}

pub fn leverage(args: &LeverageArgs) -> Result<LeverageTable, Failure> {
    let file = read_portfolio(&args.portfolio)?;
    let alpha = tail_level(args.alpha, file.policy.alpha)?;
    let portfolio = file.leveraged_portfolio()?;
    let data = args.source.market(&referenced_assets(&file.positions), args.window)?;
    let h = match (args.criterion, args.h) {
        (_, Some(h)) => h,
        (Criterion::Var, None) => 0.0,
        (Criterion::Es, None) => return Err(Failure::input("--criterion es requires --h")),
    };
    let rows = |values: Vec<RowValue>| -> Vec<LeverageRow> {
        portfolio
            .asset_ids
            .iter()
            .zip(&portfolio.weights)
            .zip(values)
            .map(|((asset, w), value)| LeverageRow { asset: asset.clone(), w: *w, value })
            .collect()
    };
    let mut solution = None;
    let values = match args.mode {
        Mode::Single => single_bounds(&portfolio, &data, args.criterion, alpha, h)?,
        Mode::Sequential => {
            let criterion = match args.criterion {
                Criterion::Var => LeverageCriterion::Var,
                Criterion::Es => LeverageCriterion::Es,
            };
            portfolio
                .asset_ids
                .iter()
                .map(|a| Ok(RowValue::Bound(ops::leverage_max(&portfolio, a, criterion, alpha, h, &data)?.bound)))
                .collect::<Result<Vec<_>, Failure>>()?
        }
        Mode::Optimize => {
            let objective = match args.objective {
                Objective::MaxMean => LeverageObjective::MaxMean,
                Objective::MaxMin => LeverageObjective::MaxMin,
            };
            let view = ops::leverage_optimize(&portfolio, objective, alpha, &data)?;
            let values = view.solution.leverage.iter().map(|&l| RowValue::Optimal { l_star: l }).collect();
            solution = Some(view);
            values
        }
    };
    Ok(LeverageTable { schema: SCHEMA, mode: args.mode, alpha: alpha.value(), h, rows: rows(values), solution })
}

fn single_bounds(
    portfolio: &LeveragedPortfolio,
    data: &MarketData,
    criterion: Criterion,
    alpha: TailLevel,
    h: f64,
) -> Result<Vec<RowValue>, Failure> {
    let model = &data.model;
    portfolio
        .asset_ids
        .iter()
        .zip(&portfolio.weights)
        .map(|(asset, &w)| {
            let i = model.index_of(asset).ok_or_else(|| Failure::input(format!("unknown asset: {asset}")))?;
            let params = NormalParams::new(model.mu[i], model.volatility(i))?;
            let bound = match criterion {
                Criterion::Var => max_leverage_single(params, w, alpha, h)?,
                Criterion::Es => max_leverage_es_single(params, w, h)?,
            };
            Ok(RowValue::Bound(bound))
        })
        .collect()
}

#[derive(Debug, Clone, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub prices: PathBuf,
    #[arg(long)]
    pub portfolio: PathBuf,
    /// Use the last N common observations.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    /// Share of the window used for calibration.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Period {
    pub first: String,
    pub last: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeverageCheck {
    pub asset_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub leverage: Vec<f64>,
    /// `VaR_alpha(l_w^T R)` under the calibrated model.
    pub model_var: f64,
    /// Empirical alpha-quantile of `l_w^T R` over the backtest days.
    pub realized_quantile: f64,
    /// True when the realized quantile falls below -1.
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestView {
    pub schema: u32,
    pub alpha: f64,
    pub h: f64,
    pub method: RiskMethod,
    pub calibration: Period,
    pub backtest: Period,
    pub margin_factor: f64,
    /// The availability floor `-h C`.
    pub threshold: Money,
    pub breaches: usize,
    pub expected_breaches: f64,
    pub breach_rate: f64,
    /// `-q_alpha(M) / C` over the backtest days.
    pub h_emp: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leverage: Option<LeverageCheck>,
    pub warnings: Vec<String>,
}

fn period(panel: &levmargin_core::market_data::AlignedReturnPanel) -> Period {
    Period {
        first: panel.dates.first().map(ToString::to_string).unwrap_or_default(),
        last: panel.dates.last().map(ToString::to_string).unwrap_or_default(),
        rows: panel.n_rows(),
    }
}

pub fn backtest(args: &BacktestArgs) -> Result<BacktestView, Failure> {
    let file = read_portfolio(&args.portfolio)?;
    let policy = policy_with(&file, args.alpha, args.h)?;
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(Failure::input(format!("--split must lie in (0, 1), got {}", args.split)));
    }
    let full = MarketData::for_assets(&read_price_dir(&args.prices)?, &referenced_assets(&file.positions), args.window)?;
    let mut warnings = Vec::new();
    let rows = full.panel.n_rows();
    if let Some(w) = args.window.filter(|w| *w > rows) {
        warnings.push(format!("window {w} exceeds the {rows} common observations"));
    }
    let cut = (rows as f64 * args.split).round() as usize;
    if cut < 2 || cut >= rows {
        return Err(Failure::input(format!("cannot split {rows} observations at {}", args.split)));
    }
    let calibration = full.panel.slice(0..cut);
    let realized = full.panel.slice(cut..rows);
    let fitted = MarketData {
        model: fit_normal(&calibration)?,
        history: Some(ScenarioSet::from_panel(&calibration)?),
        spots: full.spots.clone(),
        warnings: fit_warning(&calibration).into_iter().collect(),
        panel: calibration.clone(),
    };
    warnings.extend(fitted.warnings.iter().cloned());
    let scenarios = ScenarioSet::from_panel(&realized)?;
    warnings.extend(tail_warning(scenarios.n_scenarios(), policy.alpha));

    let capital = round_money(file.capital);
    let opened = MarginAccount::open(capital, &file.positions, &policy, &fitted.market())?;
    warnings.extend(opened.warnings.iter().cloned());
    let account = opened.committed(capital);
    let eod = eod_availability_scenarios(&account, &scenarios, &fitted.spots)?;
    let threshold = -policy.h * capital;
    let breaches = eod.availability.iter().filter(|m| **m <= threshold).count();
    let n = eod.availability.len();

    let leverage = match file.leveraged_portfolio() {
        Ok(portfolio) => {
            let model = &fitted.model;
            let mut exposure = vec![0.0; model.dim()];
            for (asset, e) in portfolio.asset_ids.iter().zip(portfolio.exposure()) {
                let i = model.index_of(asset).ok_or_else(|| Failure::input(format!("unknown asset: {asset}")))?;
                exposure[i] += e;
            }
            let model_var = var_normal(model.portfolio_params(&exposure)?, policy.alpha);
            let realized_quantile = delta_quantile_check(&portfolio, &scenarios, policy.alpha)?;
            Some(LeverageCheck {
                asset_ids: portfolio.asset_ids,
                weights: portfolio.weights,
                leverage: portfolio.leverage,
                model_var,
                realized_quantile,
                violated: realized_quantile < -1.0,
            })
        }
        Err(_) => None,
    };

    Ok(BacktestView {
        schema: SCHEMA,
        alpha: policy.alpha.value(),
        h: policy.h,
        method: policy.method,
        calibration: period(&calibration),
        backtest: period(&realized),
        margin_factor: account.margin_factor,
        threshold: Money(threshold),
        breaches,
        expected_breaches: policy.alpha.value() * n as f64,
        breach_rate: breaches as f64 / n as f64,
        h_emp: -empirical_quantile(&eod.availability, policy.alpha)? / capital,
        leverage,
        warnings,
    })
}
