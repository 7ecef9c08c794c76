use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use clap::Args;
use levmargin_core::book::PortfolioFile;
use levmargin_core::dataset::MarketData;
use levmargin_core::market_data::{load_prices, PriceSeries};
use levmargin_core::scenario::NormalModel;
use levmargin_core::RiskError;
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<RiskError> for Failure {
    fn from(e: RiskError) -> Self {
        Self::input(e.to_string())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn read_portfolio(path: &Path) -> Result<PortfolioFile, Failure> {
    let file: PortfolioFile = read_json(path)?;
    file.validate().map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(file)
}

/// Every `*.csv` in `dir`, keyed by file stem.
pub fn read_price_dir(dir: &Path) -> Result<BTreeMap<String, PriceSeries>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::input(e.to_string()))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("csv") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else { continue };
        let file = std::fs::File::open(&path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let series = load_prices(file, &id).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        out.insert(id, series);
    }
    Ok(out)
}

/// Model file: a fitted normal model plus optional spot prices for options.
#[derive(Debug, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    model: NormalModel,
    #[serde(default)]
    spots: HashMap<String, f64>,
}

#[derive(Debug, Clone, Args)]
pub struct Source {
    /// Directory of `<ASSET>.csv` close price files.
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub prices: Option<PathBuf>,
    /// JSON normal model `{asset_ids, mu, sigma, spots?}`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl Source {
    pub fn market(&self, assets: &BTreeSet<String>, window: Option<usize>) -> Result<MarketData, Failure> {
        match (&self.prices, &self.model) {
            (Some(dir), _) => Ok(MarketData::for_assets(&read_price_dir(dir)?, assets, window)?),
            (None, Some(path)) => {
                let file: ModelFile = read_json(path)?;
                Ok(MarketData::from_model(file.model, file.spots)?)
            }
            (None, None) => Err(Failure::input("one of --prices or --model is required")),
        }
    }
}
