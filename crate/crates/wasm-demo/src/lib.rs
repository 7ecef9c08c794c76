//! WebAssembly exports behind `www/index.html`.
//!
//! Each export returns a JSON string; failures become JS exceptions. The
//! demo price histories are compiled in, so the page needs no server.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use levmargin_core::book::{referenced_assets, MarginPolicy, Position};
use levmargin_core::dataset::MarketData;
use levmargin_core::margin::{availability, eod_availability_scenarios, margin_factor, MarginAccount, Verdict};
use levmargin_core::market_data::{load_prices, PriceSeries};
use levmargin_core::risk::{empirical_quantile, es_normal, var_normal, NormalParams, RiskMethod, TailLevel};
use levmargin_core::scenario::sample;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const PRICES: [(&str, &str); 4] = [
    ("ENI", include_str!("../../../demo/prices/ENI.csv")),
    ("G", include_str!("../../../demo/prices/G.csv")),
    ("IGV", include_str!("../../../demo/prices/IGV.csv")),
    ("ISP", include_str!("../../../demo/prices/ISP.csv")),
];

pub const BINS: usize = 60;

fn series() -> Result<&'static BTreeMap<String, PriceSeries>, String> {
    static CELL: OnceLock<Result<BTreeMap<String, PriceSeries>, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        PRICES
            .iter()
            .map(|(id, csv)| load_prices(csv.as_bytes(), id).map(|s| (id.to_string(), s)).map_err(|e| e.to_string()))
            .collect()
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub alpha: Vec<f64>,
    pub var: Vec<f64>,
    pub es: Vec<f64>,
}

/// Normal VaR and ES of one return at `n` log-spaced tail levels in [1e-4, 0.5].
pub fn risk_curve(mu: f64, sigma: f64, n: usize) -> Result<Curve, String> {
    let params = NormalParams::new(mu, sigma).map_err(|e| e.to_string())?;
    if n < 2 {
        return Err(format!("need at least 2 points, got {n}"));
    }
    let (lo, hi) = (1e-4f64, 0.5f64);
    let mut curve = Curve { alpha: Vec::with_capacity(n), var: Vec::with_capacity(n), es: Vec::with_capacity(n) };
    for k in 0..n {
        let a = (lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).min(hi);
        let level = TailLevel::new(a).map_err(|e| e.to_string())?;
        curve.alpha.push(a);
        curve.var.push(var_normal(params, level));
        curve.es.push(es_normal(params, level));
    }
    Ok(curve)
}

#[derive(Debug, Serialize)]
pub struct MarginProfile {
    pub margin_factor: f64,
    pub availability: f64,
    pub verdict: Verdict,
    pub h: Vec<f64>,
    pub a: Vec<f64>,
    pub m: Vec<f64>,
}

/// Margin factor and availability at `h`, plus both over `h` in [0.01, 1].
pub fn margin_profile(capital: f64, invested: f64, var: f64, h: f64, n: usize) -> Result<MarginProfile, String> {
    if n < 2 {
        return Err(format!("need at least 2 points, got {n}"));
    }
    let a = margin_factor(var, h).map_err(|e| e.to_string())?;
    let m = availability(capital, invested, a);
    let mut out = MarginProfile {
        margin_factor: a,
        availability: m,
        verdict: if m >= 0.0 { Verdict::Allowed } else { Verdict::Denied },
        h: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        m: Vec::with_capacity(n),
    };
    for k in 0..n {
        let hk = 0.01 + 0.99 * k as f64 / (n - 1) as f64;
        let ak = margin_factor(var, hk).map_err(|e| e.to_string())?;
        out.h.push(hk);
        out.a.push(ak);
        out.m.push(availability(capital, invested, ak));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u32>,
}

impl Histogram {
    fn new(values: &[f64], bins: usize) -> Self {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins];
        let width = (max - min) / bins as f64;
        for v in values {
            let k = if width > 0.0 { ((v - min) / width) as usize } else { 0 };
            counts[k.min(bins - 1)] += 1;
        }
        Self { min, max, counts }
    }
}

#[derive(Debug, Serialize)]
pub struct EodView {
    pub assets: Vec<String>,
    pub var: f64,
    pub es: f64,
    pub margin_factor: f64,
    pub availability: f64,
    pub verdict: Verdict,
    /// `-h C`.
    pub threshold: f64,
    /// Empirical alpha-quantile of end-of-day availability.
    pub quantile: f64,
    pub h_emp: f64,
    pub breach_probability: f64,
    pub histogram: Histogram,
    pub warnings: Vec<String>,
}

/// Opens an account on the demo market and simulates one day of availability
/// over `m` seeded scenarios from the fitted normal model.
pub fn eod_simulation(positions_json: &str, capital: f64, alpha: f64, h: f64, m: usize, seed: u64) -> Result<EodView, String> {
    let positions: Vec<Position> = serde_json::from_str(positions_json).map_err(|e| e.to_string())?;
    let policy = MarginPolicy {
        alpha: TailLevel::new(alpha).map_err(|e| e.to_string())?,
        h,
        method: RiskMethod::Normal,
        seed,
        scenarios: m,
    };
    policy.validate().map_err(|e| e.to_string())?;
    let assets: BTreeSet<String> = referenced_assets(&positions);
    if assets.is_empty() {
        return Err("add at least one position".into());
    }
    let data = MarketData::for_assets(series()?, &assets, None).map_err(|e| e.to_string())?;
    let opened = MarginAccount::open(capital, &positions, &policy, &data.market()).map_err(|e| e.to_string())?;
    let account = opened.committed(capital);
    let scenarios = sample(&data.model, m, seed).map_err(|e| e.to_string())?;
    let eod = eod_availability_scenarios(&account, &scenarios, &data.spots).map_err(|e| e.to_string())?;
    let quantile = empirical_quantile(&eod.availability, policy.alpha).map_err(|e| e.to_string())?;
    let threshold = -h * capital;
    let breaches = eod.availability.iter().filter(|v| **v <= threshold).count();
    Ok(EodView {
        assets: assets.into_iter().collect(),
        var: opened.var,
        es: opened.es,
        margin_factor: opened.margin_factor,
        availability: opened.availability,
        verdict: opened.verdict,
        threshold,
        quantile,
        h_emp: -quantile / capital,
        breach_probability: breaches as f64 / eod.availability.len() as f64,
        histogram: Histogram::new(&eod.availability, BINS),
        warnings: opened.warnings,
    })
}

fn js(result: Result<String, String>) -> Result<String, JsError> {
    result.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = riskCurve)]
pub fn risk_curve_js(mu: f64, sigma: f64, n: usize) -> Result<String, JsError> {
    js(risk_curve(mu, sigma, n).and_then(|c| to_json(&c)))
}

#[wasm_bindgen(js_name = marginProfile)]
pub fn margin_profile_js(capital: f64, invested: f64, var: f64, h: f64, n: usize) -> Result<String, JsError> {
    js(margin_profile(capital, invested, var, h, n).and_then(|p| to_json(&p)))
}

#[wasm_bindgen(js_name = eodSimulation)]
pub fn eod_simulation_js(positions_json: &str, capital: f64, alpha: f64, h: f64, m: usize, seed: u64) -> Result<String, JsError> {
    js(eod_simulation(positions_json, capital, alpha, h, m, seed).and_then(|v| to_json(&v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_is_monotone() {
        let c = risk_curve(0.0, 0.01, 40).unwrap();
        assert_eq!(c.alpha.len(), 40);
        assert!((c.alpha[39] - 0.5).abs() < 1e-12);
        assert!(c.var.windows(2).all(|w| w[1] < w[0]));
        assert!(c.es.iter().zip(&c.var).all(|(e, v)| e >= v));
        assert!(c.var[39].abs() < 1e-12);
        assert!(risk_curve(0.0, -1.0, 10).is_err());
    }

    #[test]
    fn profile_matches_goldens() {
        let p = margin_profile(10_000.0, 45_000.0, 0.0804, 0.2, 5).unwrap();
        assert!((p.margin_factor - 0.2867).abs() < 5e-4);
        assert_eq!(p.h.len(), 5);
        assert!(p.a.windows(2).all(|w| w[1] < w[0]));
        let denied = margin_profile(10_000.0, 45_000.0, 0.0624, 0.2, 2).unwrap();
        assert!((denied.availability + 701.0).abs() < 2.0);
        assert_eq!(denied.verdict, Verdict::Denied);
    }

    #[test]
    fn demo_simulation() {
        let positions = r#"[{"asset":"ISP","amount":6000},{"asset":"IGV","amount":21000},{"asset":"G","amount":3000}]"#;
        let v = eod_simulation(positions, 10_000.0, 0.001, 0.2, 20_000, 1).unwrap();
        assert_eq!(v.assets, vec!["G", "IGV", "ISP"]);
        assert!((v.margin_factor - 0.2867).abs() < 5e-4);
        assert_eq!(v.histogram.counts.iter().sum::<u32>(), 20_000);
        assert!(v.quantile > v.threshold);
        assert!(v.breach_probability < 0.01);
        assert!(eod_simulation("[]", 10_000.0, 0.01, 0.2, 100, 1).is_err());
        assert!(eod_simulation(r#"[{"asset":"XYZ","amount":1}]"#, 10_000.0, 0.01, 0.2, 100, 1).is_err());
    }
}
