//! Price histories, return series and date alignment.
//!
//! Downstream engines consume simple returns; log returns are available for
//! compounding and analysis.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub date: NaiveDate,
    pub close: f64,
}

/// Dated closing prices for one asset. Dates strictly increase and every
/// close is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    asset_id: String,
    observations: Vec<PricePoint>,
}

impl PriceSeries {
    /// Builds a series from unordered points, validating the invariants.
    pub fn new(asset_id: impl Into<String>, mut points: Vec<PricePoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.close > 0.0) || !p.close.is_finite() {
                return Err(RiskError::NonPositivePrice {
                    line: i as u64 + 1,
                    date: p.date.to_string(),
                    price: p.close,
                });
            }
        }
        points.sort_by_key(|p| p.date);
        if let Some(w) = points.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(RiskError::DuplicateDate { line: 0, date: w[0].date.to_string() });
        }
        Ok(Self { asset_id: asset_id.into(), observations: points })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn observations(&self) -> &[PricePoint] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn last_close(&self) -> Option<f64> {
        self.observations.last().map(|p| p.close)
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    date: String,
    close: String,
}

/// Parses a `date,close` CSV with ISO-8601 dates.
///
/// Line numbers in errors are 1-based and count the header line.
pub fn load_prices<R: Read>(csv_source: R, asset_id: &str) -> Result<PriceSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_source);
    let headers = reader
        .headers()
        .map_err(|e| RiskError::MalformedRow { line: 1, reason: e.to_string() })?
        .clone();
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "close" {
        return Err(RiskError::MalformedRow {
            line: 1,
            reason: format!("expected header `date,close`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut points = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| RiskError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: CsvRow = record
            .deserialize(Some(&headers))
            .map_err(|e| RiskError::MalformedRow { line, reason: e.to_string() })?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| RiskError::MalformedRow { line, reason: format!("bad date `{}`: {e}", row.date) })?;
        let close: f64 = row
            .close
            .parse()
            .map_err(|_| RiskError::MalformedRow { line, reason: format!("bad price `{}`", row.close) })?;
        if !(close > 0.0) || !close.is_finite() {
            return Err(RiskError::NonPositivePrice { line, date: row.date, price: close });
        }
        if !seen.insert(date) {
            return Err(RiskError::DuplicateDate { line, date: row.date });
        }
        points.push(PricePoint { date, close });
    }
    PriceSeries::new(asset_id, points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReturnKind {
    Simple,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnPoint {
    pub date: NaiveDate,
    pub value: f64,
}

/// Per-period returns; each point carries the date of the closing price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub asset_id: String,
    pub kind: ReturnKind,
    pub observations: Vec<ReturnPoint>,
}

impl ReturnSeries {
    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|p| p.value).collect()
    }
}

fn returns_with(p: &PriceSeries, kind: ReturnKind, f: impl Fn(f64, f64) -> f64) -> Result<ReturnSeries> {
    if p.len() < 2 {
        return Err(RiskError::SeriesTooShort(p.asset_id.clone()));
    }
    let observations = p
        .observations
        .windows(2)
        .map(|w| ReturnPoint { date: w[1].date, value: f(w[0].close, w[1].close) })
        .collect();
    Ok(ReturnSeries { asset_id: p.asset_id.clone(), kind, observations })
}

/// `P_t / P_{t-1} - 1`.
pub fn simple_returns(p: &PriceSeries) -> Result<ReturnSeries> {
    returns_with(p, ReturnKind::Simple, |prev, cur| cur / prev - 1.0)
}

/// `ln(P_t / P_{t-1})`.
pub fn log_returns(p: &PriceSeries) -> Result<ReturnSeries> {
    returns_with(p, ReturnKind::Log, |prev, cur| (cur / prev).ln())
}

/// Total return over the whole series. Simple returns compound
/// multiplicatively, log returns add up.
pub fn compound(returns: &ReturnSeries) -> Result<f64> {
    if returns.observations.is_empty() {
        return Err(RiskError::EmptySample);
    }
    let values = returns.observations.iter().map(|p| p.value);
    Ok(match returns.kind {
        ReturnKind::Simple => values.fold(1.0, |acc, r| acc * (1.0 + r)) - 1.0,
        ReturnKind::Log => values.sum(),
    })
}

/// Returns of several assets on their common dates. Rows are dates, columns
/// follow `asset_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedReturnPanel {
    pub asset_ids: Vec<String>,
    pub kind: ReturnKind,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
}

impl AlignedReturnPanel {
    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Splits the panel back into one series per asset.
    pub fn to_series(&self) -> Vec<ReturnSeries> {
        (0..self.n_assets())
            .map(|j| ReturnSeries {
                asset_id: self.asset_ids[j].clone(),
                kind: self.kind,
                observations: self
                    .dates
                    .iter()
                    .zip(&self.rows)
                    .map(|(&date, row)| ReturnPoint { date, value: row[j] })
                    .collect(),
            })
            .collect()
    }

    /// Keeps rows `range`, e.g. to split calibration and backtest windows.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            asset_ids: self.asset_ids.clone(),
            kind: self.kind,
            dates: self.dates[range.clone()].to_vec(),
            rows: self.rows[range].to_vec(),
        }
    }
}

/// Intersects the dates of all series. Column order follows the input.
pub fn align(series: &[ReturnSeries]) -> Result<AlignedReturnPanel> {
    let first = series.first().ok_or(RiskError::NoCommonDates)?;
    if series.iter().any(|s| s.kind != first.kind) {
        return Err(RiskError::MixedKinds);
    }
    let maps: Vec<BTreeMap<NaiveDate, f64>> = series
        .iter()
        .map(|s| s.observations.iter().map(|p| (p.date, p.value)).collect())
        .collect();
    let dates: Vec<NaiveDate> = maps[0]
        .keys()
        .filter(|d| maps[1..].iter().all(|m| m.contains_key(d)))
        .copied()
        .collect();
    if dates.is_empty() {
        return Err(RiskError::NoCommonDates);
    }
    let rows = dates.iter().map(|d| maps.iter().map(|m| m[d]).collect()).collect();
    Ok(AlignedReturnPanel {
        asset_ids: series.iter().map(|s| s.asset_id.clone()).collect(),
        kind: first.kind,
        dates,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(closes: &[f64]) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        let points = closes
            .iter()
            .enumerate()
            .map(|(i, &close)| PricePoint { date: start + chrono::Days::new(i as u64), close })
            .collect();
        PriceSeries::new("X", points).unwrap()
    }

    #[test]
    fn parses_two_rows() {
        let s = load_prices("date,close\n2015-01-02,100.0\n2015-01-05,110.0".as_bytes(), "ENI").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.asset_id(), "ENI");
        assert_eq!(s.last_close(), Some(110.0));
    }

    #[test]
    fn sorts_unordered_rows() {
        let s = load_prices("date,close\n2015-01-05,110\n2015-01-02,100\n".as_bytes(), "A").unwrap();
        assert_eq!(s.observations()[0].close, 100.0);
    }

    #[test]
    fn rejects_negative_price() {
        let err = load_prices("date,close\n2015-01-02,-3".as_bytes(), "A").unwrap_err();
        assert!(matches!(err, RiskError::NonPositivePrice { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn rejects_duplicate_date() {
        let err = load_prices("date,close\n2015-01-02,1\n2015-01-02,2\n".as_bytes(), "A").unwrap_err();
        assert!(matches!(err, RiskError::DuplicateDate { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn reports_malformed_line() {
        let err = load_prices("date,close\n2015-01-02,1\n2015-13-40,2\n".as_bytes(), "A").unwrap_err();
        assert!(matches!(err, RiskError::MalformedRow { line: 3, .. }), "{err:?}");
        let err = load_prices("date,close\n2015-01-02,abc\n".as_bytes(), "A").unwrap_err();
        assert!(matches!(err, RiskError::MalformedRow { line: 2, .. }), "{err:?}");
        let err = load_prices("day,px\n2015-01-02,1\n".as_bytes(), "A").unwrap_err();
        assert!(matches!(err, RiskError::MalformedRow { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn simple_return_examples() {
        assert_eq!(simple_returns(&series(&[100.0, 110.0])).unwrap().values(), vec![0.10000000000000009]);
        assert_eq!(simple_returns(&series(&[100.0, 100.0])).unwrap().values(), vec![0.0]);
        let r = simple_returns(&series(&[100.0, 110.0, 99.0])).unwrap().values();
        assert!((r[0] - 0.10).abs() < 1e-15 && (r[1] + 0.10).abs() < 1e-15);
        assert!(matches!(simple_returns(&series(&[100.0])), Err(RiskError::SeriesTooShort(_))));
    }

    #[test]
    fn log_return_examples() {
        let r = log_returns(&series(&[100.0, 110.0])).unwrap().values();
        assert!((r[0] - 0.095_310_179_804_324_87).abs() < 1e-15);
        assert_eq!(log_returns(&series(&[100.0, 100.0])).unwrap().values(), vec![0.0]);
    }

    #[test]
    fn compound_examples() {
        let p = series(&[100.0, 110.0, 99.0]);
        assert!((compound(&simple_returns(&p).unwrap()).unwrap() + 0.01).abs() < 1e-15);
        let log = compound(&log_returns(&p).unwrap()).unwrap();
        assert!((log - (99.0f64 / 100.0).ln()).abs() < 1e-15);
        let empty = ReturnSeries { asset_id: "A".into(), kind: ReturnKind::Log, observations: vec![] };
        assert_eq!(compound(&empty), Err(RiskError::EmptySample));
    }

    #[test]
    fn align_intersects_dates() {
        let a = simple_returns(&series(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        let mut b = simple_returns(&series(&[5.0, 6.0, 7.0])).unwrap();
        b.asset_id = "Y".into();
        let panel = align(&[a.clone(), b]).unwrap();
        assert_eq!(panel.n_rows(), 2);
        assert_eq!(panel.asset_ids, vec!["X", "Y"]);
        assert_eq!(panel.rows[0], vec![1.0, 0.19999999999999996]);

        let again = align(&panel.to_series()).unwrap();
        assert_eq!(again, panel);

        let log = log_returns(&series(&[1.0, 2.0])).unwrap();
        assert_eq!(align(&[a.clone(), log]), Err(RiskError::MixedKinds));
        let mut late = a.clone();
        for p in &mut late.observations {
            p.date = p.date + chrono::Days::new(100);
        }
        assert_eq!(align(&[a, late]), Err(RiskError::NoCommonDates));
        assert_eq!(align(&[]), Err(RiskError::NoCommonDates));
    }
}
