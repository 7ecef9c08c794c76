//! Multivariate normal model fitting and scenario generation.
//!
//! # Keyed uniform stream
//!
//! Monte Carlo scenarios are drawn from a counter-based stream so that any
//! element can be produced independently of every other one. For scenario
//! `i` and asset `j` under seed `s`:
//!
//! ```text
//! mix(z)  = SplitMix64 finalizer:
//!           z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!           z ^= z >> 27; z *= 0x94D049BB133111EB;
//!           z ^= z >> 31
//! k_seed  = mix(s ^ 0x9E3779B97F4A7C15)
//! k_row   = mix(k_seed ^ i)
//! h       = mix(k_row ^ (j * 0xD1B54A32D192ED03))      (wrapping multiply)
//! u       = ((h >> 11) + 0.5) / 2^53                    in (0, 1)
//! z_ij    = inv_cdf(u)                                  (AS241)
//! ```
//!
//! Scenario `i` is then `mu + L z_i` where `L` is the jittered Cholesky
//! factor. This construction is frozen; changing it changes every seeded
//! result downstream.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::market_data::AlignedReturnPanel;
use crate::normal;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const COLUMN_KEY: u64 = 0xD1B5_4A32_D192_ED03;
const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in (0, 1) for element `(row, col)` of the stream `seed`.
#[inline]
pub fn keyed_uniform(seed: u64, row: u64, col: u64) -> f64 {
    let k_seed = mix64(seed ^ GOLDEN);
    let k_row = mix64(k_seed ^ row);
    let h = mix64(k_row ^ col.wrapping_mul(COLUMN_KEY));
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Mean vector and covariance matrix of per-period simple returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalModel {
    pub asset_ids: Vec<String>,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    /// Number of observations the model was fitted on, if fitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

impl NormalModel {
    pub fn new(asset_ids: Vec<String>, mu: Vec<f64>, sigma: Vec<Vec<f64>>) -> Result<Self> {
        let model = Self { asset_ids, mu, sigma, window: None };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.asset_ids.len();
        for len in std::iter::once(self.mu.len())
            .chain(std::iter::once(self.sigma.len()))
            .chain(self.sigma.iter().map(Vec::len))
        {
            if len != n {
                return Err(RiskError::DimensionMismatch { expected: n, got: len });
            }
        }
        for i in 0..n {
            if !(self.sigma[i][i] >= 0.0) {
                return Err(RiskError::NotPositiveSemidefinite { index: i, pivot: self.sigma[i][i] });
            }
            for j in 0..i {
                let (a, b) = (self.sigma[i][j], self.sigma[j][i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(RiskError::InvalidParameter(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        if self.mu.iter().chain(self.sigma.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(RiskError::InvalidParameter("non-finite model entry".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn index_of(&self, asset: &str) -> Option<usize> {
        self.asset_ids.iter().position(|a| a == asset)
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mu)
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.sigma[i][j])
    }

    /// Mean and standard deviation of `v^T R`.
    pub fn portfolio_params(&self, v: &[f64]) -> Result<crate::risk::NormalParams> {
        self.check_len(v.len())?;
        let mean = v.iter().zip(&self.mu).map(|(a, b)| a * b).sum();
        let mut var = 0.0;
        for (i, vi) in v.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                var += vi * self.sigma[i][j] * vj;
            }
        }
        Ok(crate::risk::NormalParams { mu: mean, sigma: var.max(0.0).sqrt() })
    }

    /// Daily volatility of one asset.
    pub fn volatility(&self, index: usize) -> f64 {
        self.sigma[index][index].max(0.0).sqrt()
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(RiskError::DimensionMismatch { expected: self.dim(), got });
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a digest of the model parameters.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for id in &self.asset_ids {
            eat(id.as_bytes());
            eat(&[0]);
        }
        for v in self.mu.iter().chain(self.sigma.iter().flatten()) {
            eat(&v.to_bits().to_le_bytes());
        }
        h
    }
}

/// Sample mean and `1/(m-1)` covariance of the panel's columns.
#[allow(clippy::needless_range_loop)]
pub fn fit_normal(panel: &AlignedReturnPanel) -> Result<NormalModel> {
    let m = panel.n_rows();
    let n = panel.n_assets();
    if m < 2 {
        return Err(RiskError::InsufficientData(format!("{m} observations; at least 2 needed")));
    }
    let mut mu = vec![0.0; n];
    for row in &panel.rows {
        for (acc, v) in mu.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mu.iter_mut().for_each(|v| *v /= m as f64);
    let mut sigma = vec![vec![0.0; n]; n];
    for row in &panel.rows {
        for i in 0..n {
            let di = row[i] - mu[i];
            for j in 0..=i {
                sigma[i][j] += di * (row[j] - mu[j]);
            }
        }
    }
    let denom = (m - 1) as f64;
    for i in 0..n {
        for j in 0..i {
            let v = sigma[i][j] / denom;
            sigma[i][j] = v;
            sigma[j][i] = v;
        }
        sigma[i][i] /= denom;
    }
    Ok(NormalModel { asset_ids: panel.asset_ids.clone(), mu, sigma, window: Some(m) })
}

/// Present when the window is too short for a full-rank covariance.
pub fn fit_warning(panel: &AlignedReturnPanel) -> Option<String> {
    (panel.n_rows() < panel.n_assets() + 1).then(|| {
        format!("{} observations for {} assets: covariance is rank deficient", panel.n_rows(), panel.n_assets())
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: DMatrix<f64>,
    /// Diagonal loading that was added before factoring.
    pub jitter: f64,
}

fn try_cholesky(a: &DMatrix<f64>, jitter: f64) -> std::result::Result<DMatrix<f64>, (usize, f64)> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err((j, d));
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Lower factor of `sigma + jitter I`, with the smallest jitter from
/// `{0, 1e-12, 1e-10, 1e-8} * trace / n` that yields positive pivots.
/// The all-zero covariance factors to the zero matrix.
pub fn cholesky(model: &NormalModel) -> Result<CholeskyFactor> {
    model.validate()?;
    let a = model.sigma_matrix();
    let n = model.dim();
    let scale = if n == 0 { 0.0 } else { a.trace() / n as f64 };
    if scale == 0.0 && a.iter().all(|&v| v == 0.0) {
        return Ok(CholeskyFactor { lower: DMatrix::zeros(n, n), jitter: 0.0 });
    }
    let mut last = (0, 0.0);
    for step in JITTER_LADDER {
        let jitter = step * scale;
        match try_cholesky(&a, jitter) {
            Ok(lower) => return Ok(CholeskyFactor { lower, jitter }),
            Err(fail) => last = fail,
        }
    }
    Err(RiskError::NotPositiveSemidefinite { index: last.0, pivot: last.1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Historical,
    MonteCarlo { seed: u64, model_digest: u64 },
    Imported,
}

/// Joint return scenarios, `m` rows by `n` assets, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    asset_ids: Vec<String>,
    data: Vec<f64>,
    provenance: Provenance,
}

impl ScenarioSet {
    pub fn new(asset_ids: Vec<String>, data: Vec<f64>, provenance: Provenance) -> Result<Self> {
        let n = asset_ids.len();
        if n == 0 || data.is_empty() || !data.len().is_multiple_of(n) {
            return Err(RiskError::DimensionMismatch { expected: n, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(RiskError::InvalidParameter("non-finite scenario entry".into()));
        }
        Ok(Self { asset_ids, data, provenance })
    }

    pub fn from_panel(panel: &AlignedReturnPanel) -> Result<Self> {
        let data = panel.rows.iter().flatten().copied().collect();
        Self::new(panel.asset_ids.clone(), data, Provenance::Historical)
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn n_scenarios(&self) -> usize {
        self.data.len() / self.n_assets()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_assets();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_assets())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn index_of(&self, asset: &str) -> Option<usize> {
        self.asset_ids.iter().position(|a| a == asset)
    }

    /// Concatenates scenario sets over the same assets, e.g. chunks
    /// produced by [`sample_range`].
    pub fn concat(parts: &[ScenarioSet]) -> Result<Self> {
        let first = parts.first().ok_or(RiskError::EmptySample)?;
        let mut data = Vec::new();
        for p in parts {
            if p.asset_ids != first.asset_ids {
                return Err(RiskError::DimensionMismatch { expected: first.n_assets(), got: p.n_assets() });
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Self { asset_ids: first.asset_ids.clone(), data, provenance: first.provenance.clone() })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let fmt = |e: csv::Error| RiskError::ScenarioFormat(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.asset_ids).map_err(fmt)?;
        for row in self.rows() {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(fmt)?;
        }
        w.flush().map_err(|e| RiskError::ScenarioFormat(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let fmt = |e: csv::Error| RiskError::ScenarioFormat(e.to_string());
        let mut r = csv::Reader::from_reader(input);
        let asset_ids: Vec<String> = r.headers().map_err(fmt)?.iter().map(str::to_owned).collect();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(fmt)?;
            for field in rec.iter() {
                data.push(field.parse::<f64>().map_err(|e| RiskError::ScenarioFormat(e.to_string()))?);
            }
        }
        Self::new(asset_ids, data, Provenance::Imported)
    }
}

fn draw_row(lower: &DMatrix<f64>, mu: &[f64], seed: u64, i: u64, z: &mut [f64], out: &mut [f64]) {
    let n = mu.len();
    for (j, zj) in z.iter_mut().enumerate() {
        *zj = normal::inv_cdf(keyed_uniform(seed, i, j as u64));
    }
    for r in 0..n {
        let mut acc = mu[r];
        for c in 0..=r {
            acc += lower[(r, c)] * z[c];
        }
        out[r] = acc;
    }
}

/// Scenarios `range` of the stream for `(model, seed)`. Concatenating
/// consecutive ranges reproduces [`sample`] exactly.
pub fn sample_range(model: &NormalModel, range: std::ops::Range<u64>, seed: u64) -> Result<ScenarioSet> {
    let factor = cholesky(model)?;
    let n = model.dim();
    let m = (range.end.saturating_sub(range.start)) as usize;
    if m == 0 || n == 0 {
        return Err(RiskError::InvalidParameter("scenario count must be at least 1".into()));
    }
    let mut data = vec![0.0; m * n];
    let fill = |(k, out): (usize, &mut [f64])| {
        let mut z = vec![0.0; n];
        draw_row(&factor.lower, &model.mu, seed, range.start + k as u64, &mut z, out);
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(n).enumerate().for_each(fill);
    }
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(n).enumerate().for_each(fill);

    ScenarioSet::new(
        model.asset_ids.clone(),
        data,
        Provenance::MonteCarlo { seed, model_digest: model.digest() },
    )
}

/// `m` scenarios `mu + L z_i` from the keyed stream.
pub fn sample(model: &NormalModel, m: usize, seed: u64) -> Result<ScenarioSet> {
    sample_range(model, 0..m as u64, seed)
}

/// Row-wise dot products `exposure^T R_i`.
pub fn portfolio_scenarios(s: &ScenarioSet, exposure: &[f64]) -> Result<Vec<f64>> {
    if exposure.len() != s.n_assets() {
        return Err(RiskError::DimensionMismatch { expected: s.n_assets(), got: exposure.len() });
    }
    Ok(s.rows().map(|r| r.iter().zip(exposure).map(|(a, b)| a * b).sum()).collect())
}
