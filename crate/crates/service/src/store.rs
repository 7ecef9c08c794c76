//! Durable state: an append-only JSON-lines event log plus periodic
//! snapshots.
//!
//! Every mutation is written to `events.jsonl` before it is applied. A
//! snapshot (`snapshot.json`) holds the full state as of some sequence
//! number; recovery loads it and replays the log entries after it.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use levmargin_core::book::{Instrument, MarginPolicy, Position, Trade};
use levmargin_core::margin::MarginAccount;
use levmargin_core::market_data::{load_prices, PriceSeries};
use serde::{Deserialize, Serialize};

use crate::money::Money;

pub const SNAPSHOT_EVERY: u64 = 50;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt storage: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionView {
    #[serde(flatten)]
    pub instrument: Instrument,
    pub amount: Money,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leverage: Option<f64>,
}

/// Margin account in its serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountView {
    pub capital: Money,
    pub positions: Vec<PositionView>,
    pub invested: Money,
    pub margin_factor: f64,
    pub availability: Money,
}

impl From<&MarginAccount> for AccountView {
    fn from(a: &MarginAccount) -> Self {
        Self {
            capital: Money(a.capital),
            positions: a
                .positions
                .iter()
                .map(|p| PositionView { instrument: p.instrument.clone(), amount: Money(p.amount), leverage: p.leverage })
                .collect(),
            invested: Money(a.invested()),
            margin_factor: a.margin_factor,
            availability: Money(a.availability),
        }
    }
}

impl AccountView {
    pub fn to_account(&self) -> MarginAccount {
        MarginAccount {
            capital: self.capital.0,
            positions: self
                .positions
                .iter()
                .map(|p| Position { instrument: p.instrument.clone(), amount: p.amount.0, leverage: p.leverage })
                .collect(),
            margin_factor: self.margin_factor,
            availability: self.availability.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioRecord {
    pub id: String,
    pub owner: String,
    pub account: AccountView,
    pub policy: MarginPolicy,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    Created { record: PortfolioRecord },
    PricesLoaded { asset_id: String, csv: String },
    TradeCommitted { trade: Trade, account: AccountView, version: u64 },
    TradeDenied { trade: Trade, margin_factor: f64, availability: Money, version: u64 },
    PolicyChanged { policy: MarginPolicy, account: AccountView, version: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub portfolio_id: Option<String>,
    #[serde(flatten)]
    pub event: Event,
}

/// Everything the service knows, in canonical serialized form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub seq: u64,
    pub prices: BTreeMap<String, String>,
    pub portfolios: BTreeMap<String, PortfolioRecord>,
}

impl State {
    pub fn apply(&mut self, entry: &EventLogEntry) -> Result<(), StoreError> {
        if entry.seq != self.seq + 1 {
            return Err(StoreError::Corrupt(format!("sequence {} follows {}", entry.seq, self.seq)));
        }
        fn record<'s>(state: &'s mut State, id: &Option<String>) -> Result<&'s mut PortfolioRecord, StoreError> {
            let id = id.as_deref().unwrap_or_default();
            state.portfolios.get_mut(id).ok_or_else(|| StoreError::Corrupt(format!("unknown portfolio {id}")))
        }
        match &entry.event {
            Event::Created { record } => {
                self.portfolios.insert(record.id.clone(), record.clone());
            }
            Event::PricesLoaded { asset_id, csv } => {
                self.prices.insert(asset_id.clone(), csv.clone());
            }
            Event::TradeCommitted { account, version, .. } => {
                let r = record(self, &entry.portfolio_id)?;
                r.account = account.clone();
                r.version = *version;
            }
            Event::TradeDenied { .. } => {}
            Event::PolicyChanged { policy, account, version } => {
                let r = record(self, &entry.portfolio_id)?;
                r.policy = policy.clone();
                r.account = account.clone();
                r.version = *version;
            }
        }
        self.seq = entry.seq;
        Ok(())
    }

    /// Canonical bytes used for replay comparisons.
    pub fn canonical(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    /// Parsed price series of every stored asset.
    pub fn series(&self) -> Result<BTreeMap<String, PriceSeries>, StoreError> {
        self.prices
            .iter()
            .map(|(id, csv)| {
                load_prices(csv.as_bytes(), id)
                    .map(|s| (id.clone(), s))
                    .map_err(|e| StoreError::Corrupt(format!("stored prices of {id}: {e}")))
            })
            .collect()
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: File,
    state: State,
    series: BTreeMap<String, PriceSeries>,
    snapshot_every: u64,
}

impl Store {
    /// Opens or creates the storage under `dir` and recovers its state.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(dir, SNAPSHOT_EVERY)
    }

    pub fn open_with(dir: impl AsRef<Path>, snapshot_every: u64) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut state = match fs::read(dir.join("snapshot.json")) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(format!("snapshot: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => State::default(),
            Err(e) => return Err(e.into()),
        };
        for entry in read_log(&dir.join("events.jsonl"))? {
            if entry.seq > state.seq {
                state.apply(&entry)?;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(dir.join("events.jsonl"))?;
        let series = state.series()?;
        Ok(Self { dir, log, state, series, snapshot_every: snapshot_every.max(1) })
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn series(&self) -> &BTreeMap<String, PriceSeries> {
        &self.series
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes the event durably, then applies it.
    pub fn append(&mut self, portfolio_id: Option<String>, event: Event) -> Result<EventLogEntry, StoreError> {
        let entry = EventLogEntry { seq: self.state.seq + 1, timestamp_ms: now_ms(), portfolio_id, event };
        let mut line = serde_json::to_vec(&entry).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        if let Event::PricesLoaded { asset_id, csv } = &entry.event {
            let parsed = load_prices(csv.as_bytes(), asset_id).map_err(|e| StoreError::Corrupt(e.to_string()))?;
            self.series.insert(asset_id.clone(), parsed);
        }
        self.state.apply(&entry)?;
        if self.state.seq.is_multiple_of(self.snapshot_every) {
            self.snapshot()?;
        }
        Ok(entry)
    }

    pub fn snapshot(&self) -> Result<(), StoreError> {
        let tmp = self.dir.join("snapshot.json.tmp");
        fs::write(&tmp, self.state.canonical())?;
        fs::rename(tmp, self.dir.join("snapshot.json"))?;
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<EventLogEntry>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt(format!("log line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// State rebuilt from the log alone, ignoring any snapshot.
pub fn replay(dir: &Path) -> Result<State, StoreError> {
    let mut state = State::default();
    for entry in read_log(&dir.join("events.jsonl"))? {
        state.apply(&entry)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use levmargin_core::risk::{RiskMethod, TailLevel};

    fn record() -> PortfolioRecord {
        PortfolioRecord {
            id: "p1".into(),
            owner: "desk".into(),
            account: AccountView {
                capital: Money(10_000.0),
                positions: vec![PositionView { instrument: Instrument::Asset("ISP".into()), amount: Money(6000.0), leverage: None }],
                invested: Money(6000.0),
                margin_factor: 0.25,
                availability: Money(8500.0),
            },
            policy: MarginPolicy {
                alpha: TailLevel::new(0.001).unwrap(),
                h: 0.2,
                method: RiskMethod::Normal,
                seed: 0,
                scenarios: 1000,
            },
            version: 1,
        }
    }

    #[test]
    fn entry_format() {
        let entry = EventLogEntry {
            seq: 1,
            timestamp_ms: 5,
            portfolio_id: Some("p1".into()),
            event: Event::Created { record: record() },
        };
        let text = serde_json::to_string(&entry).unwrap();
        assert!(text.starts_with(r#"{"seq":1,"timestamp_ms":5,"portfolio_id":"p1","kind":"created","payload":"#), "{text}");
        assert!(text.contains(r#""capital":10000.0000"#));
        assert!(text.contains(r#""asset":"ISP","amount":6000.0000"#));
        let back: EventLogEntry = serde_json::from_str(&text).unwrap();
        assert_eq!(back, entry);
    }

    #[test]
    fn recovers_from_snapshot_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open_with(dir.path(), 2).unwrap();
        store.append(None, Event::PricesLoaded { asset_id: "A".into(), csv: "date,close\n2020-01-01,1\n".into() }).unwrap();
        store.append(Some("p1".into()), Event::Created { record: record() }).unwrap();
        let mut next = record().account;
        next.availability = Money(1.0);
        store
            .append(
                Some("p1".into()),
                Event::TradeCommitted { trade: Trade { positions: vec![] }, account: next, version: 2 },
            )
            .unwrap();
        let live = store.state().clone();
        drop(store);
        let reopened = Store::open(dir.path()).unwrap();
        assert_eq!(reopened.state().canonical(), live.canonical());
        assert_eq!(replay(dir.path()).unwrap().canonical(), live.canonical());
        assert_eq!(reopened.series()["A"].len(), 1);
        assert_eq!(live.portfolios["p1"].version, 2);
    }

    #[test]
    fn rejects_gaps() {
        let mut s = State::default();
        let e = EventLogEntry { seq: 2, timestamp_ms: 0, portfolio_id: None, event: Event::Created { record: record() } };
        assert!(s.apply(&e).is_err());
    }
}
