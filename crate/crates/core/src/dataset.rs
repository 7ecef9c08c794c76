//! Price histories turned into the inputs every valuation needs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Result, RiskError};
use crate::margin::Market;
use crate::market_data::{align, simple_returns, AlignedReturnPanel, PriceSeries};
use crate::scenario::{fit_normal, fit_warning, NormalModel, ScenarioSet};

#[derive(Debug, Clone)]
pub struct MarketData {
    pub panel: AlignedReturnPanel,
    pub model: NormalModel,
    pub history: Option<ScenarioSet>,
    pub spots: HashMap<String, f64>,
    pub warnings: Vec<String>,
}

impl MarketData {
    /// Aligns simple returns of `series` and fits on the last `window`
    /// common observations (all of them when `None`).
    pub fn from_series(series: &[PriceSeries], window: Option<usize>) -> Result<Self> {
        if series.is_empty() {
            return Err(RiskError::InsufficientData("no price series".into()));
        }
        let returns = series.iter().map(simple_returns).collect::<Result<Vec<_>>>()?;
        let mut panel = align(&returns)?;
        if let Some(w) = window {
            if w < 2 {
                return Err(RiskError::InvalidParameter(format!("window must be at least 2, got {w}")));
            }
            let rows = panel.n_rows();
            panel = panel.slice(rows.saturating_sub(w)..rows);
        }
        Self::from_panel(panel, series)
    }

    /// Market over `assets` in lexicographic order, taken from a price store.
    /// An empty asset set gives an empty model.
    pub fn for_assets(
        store: &BTreeMap<String, PriceSeries>,
        assets: &BTreeSet<String>,
        window: Option<usize>,
    ) -> Result<Self> {
        if assets.is_empty() {
            return Ok(Self::empty());
        }
        let series = assets
            .iter()
            .map(|a| store.get(a).cloned().ok_or_else(|| RiskError::UnknownAsset(a.clone())))
            .collect::<Result<Vec<_>>>()?;
        Self::from_series(&series, window)
    }

    /// Market given directly by a model, without price history.
    pub fn from_model(model: NormalModel, spots: HashMap<String, f64>) -> Result<Self> {
        model.validate()?;
        let mut data = Self::empty();
        data.panel.asset_ids = model.asset_ids.clone();
        data.model = model;
        data.spots = spots;
        Ok(data)
    }

    fn empty() -> Self {
        let panel = AlignedReturnPanel {
            asset_ids: Vec::new(),
            kind: crate::market_data::ReturnKind::Simple,
            dates: Vec::new(),
            rows: Vec::new(),
        };
        Self {
            panel,
            model: NormalModel { asset_ids: Vec::new(), mu: Vec::new(), sigma: Vec::new(), window: None },
            history: None,
            spots: HashMap::new(),
            warnings: Vec::new(),
        }
    }

    fn from_panel(panel: AlignedReturnPanel, series: &[PriceSeries]) -> Result<Self> {
        let model = fit_normal(&panel)?;
        let history = Some(ScenarioSet::from_panel(&panel)?);
        let spots = series
            .iter()
            .filter_map(|s| s.last_close().map(|c| (s.asset_id().to_owned(), c)))
            .collect();
        let warnings = fit_warning(&panel).into_iter().collect();
        Ok(Self { panel, model, history, spots, warnings })
    }

    pub fn market(&self) -> Market<'_> {
        Market { model: &self.model, history: self.history.as_ref(), spots: &self.spots }
    }
}
