//! Black-Scholes pricing of European vanilla options and full-revaluation
//! option return scenarios.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::normal;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub underlying_id: String,
    pub kind: OptionKind,
    pub strike: f64,
    pub expiry_years: f64,
    /// Continuously compounded annual risk-free rate.
    pub rate: f64,
    pub vol_annual: f64,
}

impl OptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0) || !(self.expiry_years > 0.0) || !(self.vol_annual >= 0.0) || !self.rate.is_finite() {
            return Err(RiskError::InvalidParameter(format!(
                "option on {}: strike {}, expiry {}, vol {}",
                self.underlying_id, self.strike, self.expiry_years, self.vol_annual
            )));
        }
        Ok(())
    }
}

/// Annual volatility from a daily one, on a 252-day year.
pub fn annualize_vol(daily: f64) -> f64 {
    daily * TRADING_DAYS_PER_YEAR.sqrt()
}

fn price_with_expiry(kind: OptionKind, spot: f64, strike: f64, rate: f64, vol: f64, t: f64) -> f64 {
    let discounted = strike * (-rate * t).exp();
    let vol_t = vol * t.sqrt();
    if vol_t == 0.0 {
        return match kind {
            OptionKind::Call => (spot - discounted).max(0.0),
            OptionKind::Put => (discounted - spot).max(0.0),
        };
    }
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * t) / vol_t;
    let d2 = d1 - vol_t;
    match kind {
        OptionKind::Call => spot * normal::cdf(d1) - discounted * normal::cdf(d2),
        OptionKind::Put => discounted * normal::cdf(-d2) - spot * normal::cdf(-d1),
    }
}

pub fn bs_price(spec: &OptionSpec, spot: f64) -> Result<f64> {
    spec.validate()?;
    if !(spot > 0.0) {
        return Err(RiskError::InvalidParameter(format!("spot must be positive, got {spot}")));
    }
    Ok(price_with_expiry(spec.kind, spot, spec.strike, spec.rate, spec.vol_annual, spec.expiry_years))
}

/// Simple option returns when the underlying moves by each of
/// `underlying_returns` over `holding_days`. Each scenario is repriced at
/// `spot (1 + r)` with the expiry shortened by `holding_days / 252`.
pub fn option_return_scenarios(
    spec: &OptionSpec,
    spot: f64,
    underlying_returns: &[f64],
    holding_days: u32,
) -> Result<Vec<f64>> {
    let p0 = bs_price(spec, spot)?;
    if !(p0 > 0.0) {
        return Err(RiskError::ZeroOptionPrice);
    }
    let horizon = f64::from(holding_days) / TRADING_DAYS_PER_YEAR;
    let remaining = spec.expiry_years - horizon;
    if remaining <= 0.0 {
        return Err(RiskError::ExpiredWithinHorizon { expiry_years: spec.expiry_years, horizon_years: horizon });
    }
    Ok(underlying_returns
        .iter()
        .map(|r| {
            let s = spot * (1.0 + r);
            let p = if s > 0.0 {
                price_with_expiry(spec.kind, s, spec.strike, spec.rate, spec.vol_annual, remaining)
            } else {
                price_with_expiry(spec.kind, f64::MIN_POSITIVE, spec.strike, spec.rate, spec.vol_annual, remaining)
            };
            p / p0 - 1.0
        })
        .collect())
}
