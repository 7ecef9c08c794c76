//! Value-at-Risk and Expected Shortfall.
//!
//! All quantities use the return convention: a VaR of 0.02 means a loss of 2%
//! of the position value. `alpha` is the tail probability, so a 5% VaR is
//! requested with `alpha = 0.05`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::normal;

/// Tail probability in `(0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TailLevel(f64);

impl TailLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha <= 0.5 {
            Ok(Self(alpha))
        } else {
            Err(RiskError::InvalidTailLevel(alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Standard normal quantile `q_{1-alpha}` (positive for alpha < 0.5).
    pub fn z(self) -> f64 {
        -normal::inv_cdf(self.0)
    }
}

impl TryFrom<f64> for TailLevel {
    type Error = RiskError;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TailLevel> for f64 {
    fn from(t: TailLevel) -> f64 {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(RiskError::InvalidParameter(format!("normal params mu={mu}, sigma={sigma}")));
        }
        Ok(Self { mu, sigma })
    }
}

/// `q_{1-alpha} * sigma - mu`. Negative when the drift dominates.
pub fn var_normal(p: NormalParams, alpha: TailLevel) -> f64 {
    var_normal_z(p, alpha.z())
}

/// Normal VaR with an explicit quantile, e.g. the rounded 1.65 of textbook
/// RiskMetrics examples.
pub fn var_normal_z(p: NormalParams, z: f64) -> f64 {
    z * p.sigma - p.mu
}

/// `C_alpha * sigma - mu` with `C_alpha = phi(q_{1-alpha}) / alpha`.
pub fn es_normal(p: NormalParams, alpha: TailLevel) -> f64 {
    es_normal_z(p, alpha, alpha.z())
}

pub fn es_normal_z(p: NormalParams, alpha: TailLevel, z: f64) -> f64 {
    normal::pdf(z) / alpha.value() * p.sigma - p.mu
}

/// ES minus VaR of a normal law at tail level `x`; independent of the mean.
pub fn es_var_gap(sigma: f64, x: f64) -> f64 {
    let z = -normal::inv_cdf(x);
    sigma * (normal::pdf(z) / x - z)
}

/// `(mu T, sigma sqrt(T))`.
pub fn scale_horizon(p: NormalParams, days: u32) -> Result<NormalParams> {
    if days == 0 {
        return Err(RiskError::InvalidParameter("horizon must be at least one day".into()));
    }
    let t = f64::from(days);
    Ok(NormalParams { mu: p.mu * t, sigma: p.sigma * t.sqrt() })
}

/// Loss distribution with finitely many outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLoss {
    outcomes: Vec<(f64, f64)>,
}

impl DiscreteLoss {
    /// Merges equal loss values and sorts by loss.
    pub fn new(outcomes: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut outcomes: Vec<(f64, f64)> = outcomes.into_iter().collect();
        if outcomes.iter().any(|&(l, p)| !(p >= 0.0) || !l.is_finite()) {
            return Err(RiskError::InvalidDistribution(f64::NAN));
        }
        let total: f64 = outcomes.iter().map(|o| o.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(RiskError::InvalidDistribution(total));
        }
        outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
        outcomes.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
        Ok(Self { outcomes })
    }

    pub fn outcomes(&self) -> &[(f64, f64)] {
        &self.outcomes
    }

    /// Distribution of the sum of two independent losses.
    pub fn add_independent(&self, other: &Self) -> Self {
        let pairs = self
            .outcomes
            .iter()
            .flat_map(|&(l1, p1)| other.outcomes.iter().map(move |&(l2, p2)| (l1 + l2, p1 * p2)));
        let mut sum = Self { outcomes: pairs.collect() };
        sum.outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
        sum.outcomes.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
        sum
    }
}

/// `inf { l : P(L > l) <= alpha }` over the support.
pub fn var_discrete(d: &DiscreteLoss, alpha: TailLevel) -> f64 {
    let mut exceed: f64 = d.outcomes.iter().map(|o| o.1).sum();
    for &(loss, p) in &d.outcomes {
        exceed -= p;
        if exceed <= alpha.value() + 1e-12 {
            return loss;
        }
    }
    // Unreachable for valid distributions: the tail after the last outcome is 0.
    d.outcomes.last().map_or(0.0, |o| o.0)
}

/// `ceil(n * alpha)` with products that land within rounding noise of an
/// integer treated as that integer (0.07 * 100 is 7, not 8).
pub fn tail_count(n: usize, alpha: TailLevel) -> usize {
    let t = n as f64 * alpha.value();
    let r = t.round();
    let k = if (t - r).abs() <= 1e-9 * r.max(1.0) { r } else { t.ceil() };
    (k as usize).clamp(1, n.max(1))
}

/// Present when the sample is too short for the requested tail level.
pub fn tail_warning(n: usize, alpha: TailLevel) -> Option<String> {
    (n as f64 * alpha.value() < 1.0).then(|| {
        format!("n·α < 1 (n = {n}, α = {}): the estimate is the sample minimum", alpha.value())
    })
}

fn sorted(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(RiskError::EmptySample);
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Empirical alpha-quantile of returns: the order statistic `r_(ceil(n alpha))`.
pub fn empirical_quantile(sample: &[f64], alpha: TailLevel) -> Result<f64> {
    let v = sorted(sample)?;
    Ok(v[tail_count(v.len(), alpha) - 1])
}

/// Historical VaR: the negated empirical quantile.
pub fn var_empirical(sample: &[f64], alpha: TailLevel) -> Result<f64> {
    empirical_quantile(sample, alpha).map(|q| -q)
}

/// Historical ES, with the boundary order statistic weighted so the estimate
/// averages exactly an `alpha` share of the sample.
pub fn es_empirical(sample: &[f64], alpha: TailLevel) -> Result<f64> {
    let v = sorted(sample)?;
    let n = v.len() as f64;
    let k = tail_count(v.len(), alpha);
    let a = alpha.value();
    let full: f64 = v[..k - 1].iter().sum::<f64>() / n;
    let partial = (a - (k - 1) as f64 / n) * v[k - 1];
    Ok(-(full + partial) / a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    Normal,
    Historical,
    MonteCarlo,
}

impl std::str::FromStr for RiskMethod {
    type Err = RiskError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "historical" => Ok(Self::Historical),
            "monte_carlo" | "montecarlo" | "mc" => Ok(Self::MonteCarlo),
            other => Err(RiskError::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub alpha: TailLevel,
    pub horizon_days: u32,
    pub var: f64,
    pub es: f64,
    pub method: RiskMethod,
}
