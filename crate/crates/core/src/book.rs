//! Positions and the portfolio file format.
//!
//! ```json
//! {
//!   "capital": 10000,
//!   "positions": [
//!     { "asset": "ISP", "amount": 6000 },
//!     { "option": { "underlying": "IGV", "kind": "put", "strike": "last",
//!                   "expiry_years": 0.8333, "rate": 0.10 }, "amount": 10000 }
//!   ],
//!   "policy": { "alpha": 0.001, "h": 0.2, "method": "normal" }
//! }
//! ```
//!
//! `strike: "last"` resolves to the underlying's last close when the trade is
//! evaluated; a missing `vol_annual` resolves to the fitted daily volatility
//! times `sqrt(252)`.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::derivatives::{annualize_vol, OptionKind, OptionSpec};
use crate::error::{Result, RiskError};
use crate::leverage::LeveragedPortfolio;
use crate::risk::{RiskMethod, TailLevel};
use crate::scenario::NormalModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Strike {
    Price(f64),
    /// Only the keyword `"last"` is accepted.
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionTerms {
    pub underlying: String,
    pub kind: OptionKind,
    pub strike: Strike,
    pub expiry_years: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vol_annual: Option<f64>,
}

fn default_rate() -> f64 {
    0.10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Asset(String),
    Option(OptionTerms),
}

impl Instrument {
    /// Asset whose returns drive this instrument.
    pub fn underlying(&self) -> &str {
        match self {
            Self::Asset(a) => a,
            Self::Option(o) => &o.underlying,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Asset(a) => a.clone(),
            Self::Option(o) => {
                let kind = match o.kind {
                    OptionKind::Call => "call",
                    OptionKind::Put => "put",
                };
                match &o.strike {
                    Strike::Price(k) => format!("{} {kind} K={k} T={}", o.underlying, o.expiry_years),
                    Strike::Keyword(s) => format!("{} {kind} K={s} T={}", o.underlying, o.expiry_years),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Position {
    #[serde(flatten)]
    pub instrument: Instrument,
    /// Invested currency amount.
    pub amount: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leverage: Option<f64>,
}

impl Position {
    pub fn asset(id: impl Into<String>, amount: f64) -> Self {
        Self { instrument: Instrument::Asset(id.into()), amount, leverage: None }
    }

    pub fn option(terms: OptionTerms, amount: f64) -> Self {
        Self { instrument: Instrument::Option(terms), amount, leverage: None }
    }

    /// Fixes `strike: "last"` and a missing volatility against market data.
    pub fn resolve(&self, model: &NormalModel, spots: &HashMap<String, f64>) -> Result<Self> {
        let underlying = self.instrument.underlying();
        let index = model.index_of(underlying).ok_or_else(|| RiskError::UnknownAsset(underlying.to_owned()))?;
        let Instrument::Option(terms) = &self.instrument else {
            return Ok(self.clone());
        };
        let spot = || spots.get(underlying).copied().ok_or_else(|| RiskError::UnknownAsset(underlying.to_owned()));
        let strike = match &terms.strike {
            Strike::Price(k) => *k,
            Strike::Keyword(s) if s == "last" => spot()?,
            Strike::Keyword(s) => return Err(RiskError::InvalidParameter(format!("unknown strike keyword `{s}`"))),
        };
        let vol = terms.vol_annual.unwrap_or_else(|| annualize_vol(model.volatility(index)));
        let resolved = OptionTerms { strike: Strike::Price(strike), vol_annual: Some(vol), ..terms.clone() };
        resolved.to_spec()?.validate()?;
        Ok(Self { instrument: Instrument::Option(resolved), ..self.clone() })
    }
}

impl OptionTerms {
    /// Pricing spec of resolved terms.
    pub fn to_spec(&self) -> Result<OptionSpec> {
        let Strike::Price(strike) = self.strike else {
            return Err(RiskError::InvalidParameter("option strike is unresolved".into()));
        };
        let vol = self.vol_annual.ok_or_else(|| RiskError::InvalidParameter("option volatility is unresolved".into()))?;
        Ok(OptionSpec {
            underlying_id: self.underlying.clone(),
            kind: self.kind,
            strike,
            expiry_years: self.expiry_years,
            rate: self.rate,
            vol_annual: vol,
        })
    }
}

/// Positions to add to an account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub positions: Vec<Position>,
}

/// Underlying assets of every position.
pub fn referenced_assets<'a>(positions: impl IntoIterator<Item = &'a Position>) -> BTreeSet<String> {
    positions.into_iter().map(|p| p.instrument.underlying().to_owned()).collect()
}

fn default_scenarios() -> usize {
    100_000
}

/// How the margin desk measures portfolio risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginPolicy {
    pub alpha: TailLevel,
    /// Tolerated end-of-day availability drop, as a fraction of capital.
    pub h: f64,
    pub method: RiskMethod,
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo scenario count.
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
}

impl MarginPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(RiskError::InvalidParameter(format!("h must be positive, got {}", self.h)));
        }
        if self.scenarios == 0 {
            return Err(RiskError::InvalidParameter("scenario count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioFile {
    pub capital: f64,
    pub positions: Vec<Position>,
    pub policy: MarginPolicy,
}

impl PortfolioFile {
    pub fn validate(&self) -> Result<()> {
        if !(self.capital > 0.0) {
            return Err(RiskError::InvalidParameter(format!("capital must be positive, got {}", self.capital)));
        }
        if self.positions.iter().any(|p| !(p.amount >= 0.0)) {
            return Err(RiskError::InvalidParameter("position amounts must be non-negative".into()));
        }
        self.policy.validate()
    }

    /// Asset positions as capital fractions `amount / capital` with their
    /// leverage factors (1 when unset).
    pub fn leveraged_portfolio(&self) -> Result<LeveragedPortfolio> {
        let mut ids = Vec::new();
        let mut weights = Vec::new();
        let mut leverage = Vec::new();
        for p in &self.positions {
            match &p.instrument {
                Instrument::Asset(a) => {
                    ids.push(a.clone());
                    weights.push(p.amount / self.capital);
                    leverage.push(p.leverage.unwrap_or(1.0));
                }
                Instrument::Option(_) => {
                    return Err(RiskError::InvalidParameter("leverage limits apply to asset positions only".into()))
                }
            }
        }
        LeveragedPortfolio::new(ids, weights, leverage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_format() {
        let text = r#"{
          "capital": 10000,
          "positions": [
            { "asset": "ISP", "amount": 6000, "leverage": 2.5 },
            { "option": { "underlying": "IGV", "kind": "put", "strike": "last", "expiry_years": 0.8333 }, "amount": 10000 }
          ],
          "policy": { "alpha": 0.001, "h": 0.2, "method": "normal" }
        }"#;
        let f: PortfolioFile = serde_json::from_str(text).unwrap();
        f.validate().unwrap();
        assert_eq!(f.positions[0], Position { leverage: Some(2.5), ..Position::asset("ISP", 6000.0) });
        let Instrument::Option(o) = &f.positions[1].instrument else { panic!() };
        assert_eq!(o.strike, Strike::Keyword("last".into()));
        assert_eq!(o.rate, 0.10);
        assert_eq!(f.policy.scenarios, 100_000);
        let back: PortfolioFile = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn resolves_last_strike_and_fitted_vol() {
        let model = NormalModel::new(vec!["IGV".into()], vec![0.0], vec![vec![0.0004]]).unwrap();
        let spots = HashMap::from([("IGV".to_string(), 0.85)]);
        let terms = OptionTerms {
            underlying: "IGV".into(),
            kind: OptionKind::Put,
            strike: Strike::Keyword("last".into()),
            expiry_years: 10.0 / 12.0,
            rate: 0.1,
            vol_annual: None,
        };
        let p = Position::option(terms.clone(), 100.0).resolve(&model, &spots).unwrap();
        let Instrument::Option(r) = &p.instrument else { panic!() };
        assert_eq!(r.strike, Strike::Price(0.85));
        assert!((r.vol_annual.unwrap() - 0.02 * 252f64.sqrt()).abs() < 1e-15);

        let bad = OptionTerms { strike: Strike::Keyword("first".into()), ..terms.clone() };
        assert!(Position::option(bad, 1.0).resolve(&model, &spots).is_err());
        let unknown = OptionTerms { underlying: "ENI".into(), ..terms };
        assert_eq!(
            Position::option(unknown, 1.0).resolve(&model, &spots),
            Err(RiskError::UnknownAsset("ENI".into()))
        );
    }

    #[test]
    fn trade_and_referenced_assets() {
        let t: Trade = serde_json::from_str(r#"{"positions":[{"asset":"ENI","amount":10000}]}"#).unwrap();
        assert_eq!(t.positions, vec![Position::asset("ENI", 10_000.0)]);
        let put = OptionTerms {
            underlying: "IGV".into(),
            kind: OptionKind::Put,
            strike: Strike::Price(1.0),
            expiry_years: 1.0,
            rate: 0.1,
            vol_annual: None,
        };
        let all = [Position::asset("ENI", 1.0), Position::option(put, 1.0), Position::asset("ENI", 2.0)];
        assert_eq!(referenced_assets(&all), BTreeSet::from(["ENI".to_string(), "IGV".to_string()]));
    }

    #[test]
    fn leverage_view_uses_capital_fractions() {
        let f = PortfolioFile {
            capital: 1000.0,
            positions: vec![Position { leverage: Some(3.0), ..Position::asset("A", 100.0) }, Position::asset("B", 200.0)],
            policy: MarginPolicy {
                alpha: TailLevel::new(0.01).unwrap(),
                h: 0.1,
                method: RiskMethod::Normal,
                seed: 0,
                scenarios: 10,
            },
        };
        let lp = f.leveraged_portfolio().unwrap();
        assert_eq!(lp.weights, vec![0.1, 0.2]);
        assert_eq!(lp.leverage, vec![3.0, 1.0]);
    }
}
