//! The bundled demo prices reproduce the margin walk-through numbers.

use std::fs::File;
use std::path::Path;

use levmargin_core::book::{MarginPolicy, OptionTerms, Position, Strike};
use levmargin_core::dataset::MarketData;
use levmargin_core::derivatives::OptionKind;
use levmargin_core::margin::{evaluate_trade, MarginAccount, Verdict};
use levmargin_core::market_data::load_prices;
use levmargin_core::risk::{RiskMethod, TailLevel};

fn demo() -> MarketData {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/prices");
    let series: Vec<_> = ["ISP", "IGV", "G", "ENI"]
        .iter()
        .map(|id| load_prices(File::open(dir.join(format!("{id}.csv"))).unwrap(), id).unwrap())
        .collect();
    MarketData::from_series(&series, None).unwrap()
}

fn policy(method: RiskMethod) -> MarginPolicy {
    MarginPolicy { alpha: TailLevel::new(0.001).unwrap(), h: 0.2, method, seed: 0, scenarios: 200_000 }
}

fn book() -> Vec<Position> {
    vec![Position::asset("ISP", 6000.0), Position::asset("IGV", 21000.0), Position::asset("G", 3000.0)]
}

#[test]
fn walk_through_numbers() {
    let data = demo();
    assert_eq!(data.panel.n_rows(), 750);
    assert!((data.spots["IGV"] - 0.85).abs() < 1e-12);
    let pol = policy(RiskMethod::Normal);
    let opened = MarginAccount::open(10_000.0, &book(), &pol, &data.market()).unwrap();
    assert!((opened.var - 0.0804).abs() < 1e-6, "{}", opened.var);
    assert!((opened.margin_factor - 0.2867).abs() < 5e-4);
    assert!((opened.availability - 1399.0).abs() < 3.0);
    let account = opened.committed(10_000.0);

    let eni = evaluate_trade(&account, &[Position::asset("ENI", 10_000.0)], &pol, &data.market()).unwrap();
    assert!((eni.var - 0.0663).abs() < 1e-6, "{}", eni.var);
    assert!((eni.margin_factor - 0.2491).abs() < 5e-4);
    assert_eq!(eni.verdict, Verdict::Allowed);
    assert!((eni.availability - 38.0).abs() < 6.0, "{}", eni.availability);

    let big = evaluate_trade(&account, &[Position::asset("ENI", 15_000.0)], &pol, &data.market()).unwrap();
    assert!((big.margin_factor - 0.2378).abs() < 1e-6);
    assert_eq!(big.verdict, Verdict::Denied);
    assert!((big.availability + 701.0).abs() < 1.0, "{}", big.availability);
}

#[test]
fn put_lowers_and_call_raises_risk() {
    let data = demo();
    let pol = policy(RiskMethod::MonteCarlo);
    let account = MarginAccount::open(10_000.0, &book(), &pol, &data.market()).unwrap().committed(10_000.0);
    let base = evaluate_trade(&account, &[], &pol, &data.market()).unwrap();
    let option = |kind, amount| {
        Position::option(
            OptionTerms {
                underlying: "IGV".into(),
                kind,
                strike: Strike::Keyword("last".into()),
                expiry_years: 10.0 / 12.0,
                rate: 0.10,
                vol_annual: None,
            },
            amount,
        )
    };
    let put = evaluate_trade(&account, &[option(OptionKind::Put, 10_000.0)], &pol, &data.market()).unwrap();
    let call = evaluate_trade(&account, &[option(OptionKind::Call, 2_000.0)], &pol, &data.market()).unwrap();
    println!("base {} put {} call {}", base.var, put.var, call.var);
    assert!(put.var < base.var && base.var < call.var);
    assert!(put.margin_factor < base.margin_factor && base.margin_factor < call.margin_factor);
    assert_eq!(put.verdict, Verdict::Allowed);
    assert_eq!(call.verdict, Verdict::Denied);
}
