//! Maximum leverage factors.
//!
//! A client with capital fractions `w` and leverage factors `l` holds the
//! exposure vector `l_w = (l_k w_k)`. Per lent unit, the end-of-day net value
//! is `Delta = (l_w^T R + 1) / (l_w^T 1)`. The VaR-style rule caps
//! `P(Delta < h) <= alpha`; for `h = 0` this is `VaR_alpha(l_w^T R) <= 1`.
//! The ES-style rule caps the average loss per lent unit,
//! `-E[Delta | Delta <= 0] <= h`.
//!
//! Leverage below 1 is not a margin loan: a bound under 1 is reported as
//! [`LeverageBound::Rejected`] and the optimizer imposes `l >= 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};
use crate::normal;
use crate::risk::{empirical_quantile, es_var_gap, var_normal, NormalParams, TailLevel};
use crate::scenario::{portfolio_scenarios, NormalModel, ScenarioSet};

const ES_BRACKET: (f64, f64) = (1e-12, 0.5);
const UNBOUNDED_LEVERAGE: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum LeverageBound {
    /// Largest admissible leverage factor (at least 1).
    Bounded { l_max: f64 },
    /// Even `l = 1` breaches the limit. `bound` is the unconstrained maximum
    /// when one exists.
    Rejected { bound: Option<f64> },
    /// The limit holds for every leverage factor.
    Unbounded,
}

impl LeverageBound {
    pub fn l_max(&self) -> Option<f64> {
        match self {
            Self::Bounded { l_max } => Some(*l_max),
            _ => None,
        }
    }

    fn from_raw(bound: f64) -> Self {
        if bound >= 1.0 {
            Self::Bounded { l_max: bound }
        } else {
            Self::Rejected { bound: Some(bound) }
        }
    }
}

/// Capital fractions and leverage factors of the client's positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeveragedPortfolio {
    pub asset_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub leverage: Vec<f64>,
}

impl LeveragedPortfolio {
    pub fn new(asset_ids: Vec<String>, weights: Vec<f64>, leverage: Vec<f64>) -> Result<Self> {
        let p = Self { asset_ids, weights, leverage };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.asset_ids.len();
        for len in [self.weights.len(), self.leverage.len()] {
            if len != n {
                return Err(RiskError::DimensionMismatch { expected: n, got: len });
            }
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(RiskError::InvalidParameter("weights must be positive".into()));
        }
        if self.leverage.iter().any(|l| !(*l >= 1.0)) {
            return Err(RiskError::InvalidParameter("leverage factors must be at least 1".into()));
        }
        Ok(())
    }

    /// `l_w = (l_k w_k)`.
    pub fn exposure(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.leverage).map(|(w, l)| w * l).collect()
    }

    /// Exposure laid out in the column order of `ids`.
    fn exposure_in(&self, ids: &[String]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; ids.len()];
        for (asset, e) in self.asset_ids.iter().zip(self.exposure()) {
            let j = ids.iter().position(|a| a == asset).ok_or_else(|| RiskError::UnknownAsset(asset.clone()))?;
            v[j] += e;
        }
        Ok(v)
    }
}

/// Single-asset VaR-style bound `1 / (w (h + VaR_alpha(R)))`.
pub fn max_leverage_single(model: NormalParams, w: f64, alpha: TailLevel, h: f64) -> Result<LeverageBound> {
    if !(w > 0.0) {
        return Err(RiskError::InvalidParameter(format!("weight must be positive, got {w}")));
    }
    let denom = w * (h + var_normal(model, alpha));
    if denom <= 0.0 {
        return Ok(LeverageBound::Unbounded);
    }
    Ok(LeverageBound::from_raw(1.0 / denom))
}

/// Tail level `x*` where the ES-VaR gap of `N(., sigma^2)` equals `h`.
///
/// The gap is increasing in `x` for normal laws; this is checked on the
/// bracket before bisecting.
pub fn solve_es_tail_level(sigma: f64, h: f64) -> Result<f64> {
    let (lo, hi) = ES_BRACKET;
    let g = |x: f64| es_var_gap(sigma, x);
    let probes: Vec<f64> = (0..=24).map(|k| lo * (hi / lo).powf(k as f64 / 24.0)).collect();
    if probes.windows(2).any(|p| g(p[1]) <= g(p[0])) {
        return Err(RiskError::NonMonotoneGap);
    }
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !(h >= g_lo && h <= g_hi) {
        return Err(RiskError::NoRoot { target: h, lo, hi, g_lo, g_hi });
    }
    // Bisection on ln x keeps relative precision deep in the tail.
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if g(mid.exp()) < h {
            a = mid;
        } else {
            b = mid;
        }
    }
    let (xa, xb) = (a.exp(), b.exp());
    Ok(if (g(xa) - h).abs() <= (g(xb) - h).abs() { xa } else { xb })
}

/// Single-asset ES-style bound `1 / (w VaR_{x*}(R))`.
pub fn max_leverage_es_single(model: NormalParams, w: f64, h: f64) -> Result<LeverageBound> {
    if !(w > 0.0) || !(h > 0.0) {
        return Err(RiskError::InvalidParameter(format!("need w > 0 and h > 0, got w={w}, h={h}")));
    }
    if model.sigma == 0.0 {
        return Ok(if model.mu >= 0.0 {
            LeverageBound::Unbounded
        } else {
            LeverageBound::from_raw(1.0 / (w * -model.mu))
        });
    }
    let x = match solve_es_tail_level(model.sigma, h) {
        Ok(x) => x,
        // Above the bracket the shortfall level is capped at 1/2.
        Err(RiskError::NoRoot { g_hi, hi, .. }) if h > g_hi => hi,
        Err(e) => return Err(e),
    };
    let var = -normal::inv_cdf(x) * model.sigma - model.mu;
    if var <= 0.0 {
        return Ok(LeverageBound::Unbounded);
    }
    Ok(LeverageBound::from_raw(1.0 / (w * var)))
}

/// Exposure as an affine function of the unknown leverage factor.
struct Line {
    /// `m(l) = m0 + m1 l`
    m0: f64,
    m1: f64,
    /// `s(l)^2 = c + 2 b l + a l^2`
    a: f64,
    b: f64,
    c: f64,
    /// `L(l) = l0 + l1 l`
    l0: f64,
    l1: f64,
}

impl Line {
    fn new(model: &NormalModel, portfolio: &LeveragedPortfolio, unknown: usize) -> Result<Self> {
        portfolio.validate()?;
        if unknown >= portfolio.asset_ids.len() {
            return Err(RiskError::DimensionMismatch { expected: portfolio.asset_ids.len(), got: unknown });
        }
        let mut fixed = portfolio.clone();
        fixed.weights[unknown] = 1.0;
        fixed.leverage[unknown] = 1.0;
        let mut base = fixed.exposure_in(&model.asset_ids)?;
        let j = model
            .index_of(&portfolio.asset_ids[unknown])
            .ok_or_else(|| RiskError::UnknownAsset(portfolio.asset_ids[unknown].clone()))?;
        base[j] -= 1.0;
        let w1 = portfolio.weights[unknown];
        let sigma = &model.sigma;
        let sigma_base_j: f64 = (0..model.dim()).map(|k| sigma[j][k] * base[k]).sum();
        let quad: f64 = (0..model.dim())
            .flat_map(|i| (0..model.dim()).map(move |k| (i, k)))
            .map(|(i, k)| base[i] * sigma[i][k] * base[k])
            .sum();
        let others: f64 = portfolio
            .exposure()
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != unknown)
            .map(|(_, e)| e)
            .sum();
        Ok(Self {
            m0: base.iter().zip(&model.mu).map(|(x, m)| x * m).sum(),
            m1: w1 * model.mu[j],
            a: w1 * w1 * sigma[j][j],
            b: w1 * sigma_base_j,
            c: quad.max(0.0),
            l0: others,
            l1: w1,
        })
    }

    fn mean(&self, l: f64) -> f64 {
        self.m0 + self.m1 * l
    }

    fn sd(&self, l: f64) -> f64 {
        (self.c + 2.0 * self.b * l + self.a * l * l).max(0.0).sqrt()
    }

    fn lent(&self, l: f64) -> f64 {
        self.l0 + self.l1 * l
    }
}

/// Roots of `a x^2 + 2 b x + c`, computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return vec![];
    }
    if a.abs() <= 1e-14 * scale {
        return if b != 0.0 { vec![-c / (2.0 * b)] } else { vec![] };
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return if disc > -1e-14 * b * b { vec![-b / a] } else { vec![] };
    }
    let q = -(b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Largest leverage on position `unknown` such that `P(Delta < h) <= alpha`,
/// with every other factor held fixed. For `h = 0` the bound makes
/// `VaR_alpha(l_w^T R) = 1` tight.
///
/// The constraint `q s(l) - m(l) + h L(l) <= 1` is convex in `l`; squaring
/// it gives a quadratic whose admissible root is the bound.
pub fn max_leverage_sequential(
    model: &NormalModel,
    portfolio: &LeveragedPortfolio,
    unknown: usize,
    alpha: TailLevel,
    h: f64,
) -> Result<LeverageBound> {
    let line = Line::new(model, portfolio, unknown)?;
    let q = alpha.z();
    let slack = |l: f64| q * line.sd(l) - line.mean(l) + h * line.lent(l) - 1.0;

    // rhs(l) = 1 + m(l) - h L(l) must be non-negative at the root.
    let c0 = 1.0 + line.m0 - h * line.l0;
    let c1 = line.m1 - h * line.l1;
    let qa = q * q;
    let roots = quadratic_roots(qa * line.a - c1 * c1, qa * line.b - c0 * c1, qa * line.c - c0 * c0);
    let scale = |l: f64| 1.0 + q * line.sd(l) + line.mean(l).abs() + (h * line.lent(l)).abs();
    let root = roots
        .into_iter()
        .filter(|&r| r.is_finite() && c0 + c1 * r >= -1e-12 && slack(r).abs() <= 1e-6 * scale(r))
        .fold(None, |best: Option<f64>, r| Some(best.map_or(r, |b| b.max(r))));

    if slack(1.0) > 0.0 {
        return Ok(LeverageBound::Rejected { bound: root });
    }
    let asymptotic_slope = q * line.a.sqrt() - c1;
    if asymptotic_slope <= 0.0 {
        return Ok(LeverageBound::Unbounded);
    }
    let mut l = match root {
        Some(r) if r >= 1.0 - 1e-9 => r.max(1.0),
        _ => bisect_upper(&slack, 1.0)?,
    };
    // Newton polish on the unsquared constraint.
    for _ in 0..3 {
        let s = line.sd(l);
        if s == 0.0 {
            break;
        }
        let ds = (line.b + line.a * l) / s;
        let d = q * ds - line.m1 + h * line.l1;
        let f = slack(l);
        if d <= 0.0 || f == 0.0 {
            break;
        }
        let next = l - f / d;
        if !(next >= 1.0) || slack(next).abs() >= f.abs() {
            break;
        }
        l = next;
    }
    Ok(LeverageBound::Bounded { l_max: l })
}

/// Largest `l >= start` with `f(l) <= 0` for a convex `f` with `f(start) <= 0`
/// that eventually turns positive.
fn bisect_upper(f: &dyn Fn(f64) -> f64, start: f64) -> Result<f64> {
    let mut lo = start;
    let mut hi = start.max(1.0) * 2.0;
    while f(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > UNBOUNDED_LEVERAGE {
            return Err(RiskError::UnboundedObjective);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `phi(z) / Phi(z) + z`, accurate for very negative `z`.
fn mills_excess(z: f64) -> f64 {
    if z > -8.0 {
        return normal::pdf(z) / normal::cdf(z) + z;
    }
    // Continued fraction for Phi(z)/phi(z) = 1/(x + 1/(x + 2/(x + ...))), x = -z.
    let x = -z;
    let mut tail = x;
    for k in (1..=80).rev() {
        tail = x + k as f64 / tail;
    }
    tail - x
}

/// Expected loss per lent unit given default, `-E[Delta | Delta <= 0]`, for a
/// normal portfolio return with mean `m`, sd `s` and lent amount `lent`.
pub fn expected_loss_per_lent(m: f64, s: f64, lent: f64) -> f64 {
    if s == 0.0 {
        return if 1.0 + m <= 0.0 { -(1.0 + m) / lent } else { 0.0 };
    }
    let z = -(1.0 + m) / s;
    s * mills_excess(z) / lent
}

/// Largest leverage on position `unknown` with the average loss per lent
/// unit on default at most `h`, other factors fixed.
pub fn max_leverage_es_sequential(
    model: &NormalModel,
    portfolio: &LeveragedPortfolio,
    unknown: usize,
    h: f64,
) -> Result<LeverageBound> {
    if !(h > 0.0) {
        return Err(RiskError::InvalidParameter(format!("h must be positive, got {h}")));
    }
    let line = Line::new(model, portfolio, unknown)?;
    let excess = |l: f64| expected_loss_per_lent(line.mean(l), line.sd(l), line.lent(l)) - h;
    if excess(1.0) > 0.0 {
        return Ok(LeverageBound::Rejected { bound: None });
    }
    match bisect_upper(&excess, 1.0) {
        Ok(l) => Ok(LeverageBound::Bounded { l_max: l }),
        Err(RiskError::UnboundedObjective) => Ok(LeverageBound::Unbounded),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeverageObjective {
    /// Maximize the expected leveraged return `l_w^T mu`.
    MaxMean,
    /// Maximize the smallest leverage factor, then the expected return.
    MaxMin,
}

impl std::str::FromStr for LeverageObjective {
    type Err = RiskError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_mean" => Ok(Self::MaxMean),
            "max_min" => Ok(Self::MaxMin),
            other => Err(RiskError::InvalidParameter(format!("unknown objective `{other}`"))),
        }
    }
}

/// Optimizer output with its optimality evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageSolution {
    pub asset_ids: Vec<String>,
    pub leverage: Vec<f64>,
    /// `l_w^T mu` for max-mean, `min_k l_k` for max-min.
    pub objective_value: f64,
    pub expected_return: f64,
    /// `VaR_alpha(l_w^T R)` at the solution.
    pub var: f64,
    /// `var - 1`; non-positive when feasible, zero when the budget binds.
    pub constraint_residual: f64,
    /// Upper bound on the distance to the optimal objective (barrier gap).
    pub duality_gap: f64,
    pub iterations: usize,
}

/// `q ||chol(Sigma) y|| - mu^T y - 1 <= 0` and its derivatives.
struct VarBudget {
    q: f64,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl VarBudget {
    fn value(&self, y: &DVector<f64>) -> f64 {
        let s = y.dot(&(&self.sigma * y)).max(0.0).sqrt();
        self.q * s - self.mu.dot(y) - 1.0
    }

    fn derivatives(&self, y: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let sy = &self.sigma * y;
        let s2 = y.dot(&sy).max(0.0);
        let s = (s2 + 1e-300).sqrt();
        let value = self.q * s2.sqrt() - self.mu.dot(y) - 1.0;
        let grad = &sy * (self.q / s) - &self.mu;
        let hess = (&self.sigma / s - (&sy * sy.transpose()) / (s * s * s)) * self.q;
        (value, grad, hess)
    }
}

/// Log-barrier interior point for
/// `min c^T z  s.t.  A z >= b,  budget(z[..n]) <= 0`.
struct Barrier<'a> {
    budget: &'a VarBudget,
    n: usize,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

struct BarrierResult {
    z: DVector<f64>,
    gap: f64,
    iterations: usize,
}

impl Barrier<'_> {
    fn strictly_feasible(&self, z: &DVector<f64>) -> bool {
        let lin = &self.a * z - &self.b;
        lin.iter().all(|v| *v > 0.0) && self.budget.value(&z.rows(0, self.n).into_owned()) < 0.0
    }

    fn merit(&self, t: f64, z: &DVector<f64>) -> f64 {
        let lin = &self.a * z - &self.b;
        let g = self.budget.value(&z.rows(0, self.n).into_owned());
        t * self.c.dot(z) - lin.iter().map(|v| v.ln()).sum::<f64>() - (-g).ln()
    }

    fn solve(&self, mut z: DVector<f64>) -> Result<BarrierResult> {
        let dim = z.len();
        let m_constraints = (self.a.nrows() + 1) as f64;
        let z_scale = 1.0 + z.amax();
        let mut t = 1.0 / (1.0 + self.c.amax() * z_scale);
        let mut iterations = 0;
        loop {
            // Centering by damped Newton.
            for _ in 0..200 {
                iterations += 1;
                let lin = &self.a * &z - &self.b;
                let y = z.rows(0, self.n).into_owned();
                let (g, dg, d2g) = self.budget.derivatives(&y);
                let mut grad = &self.c * t;
                let mut hess = DMatrix::<f64>::zeros(dim, dim);
                for (i, row) in self.a.row_iter().enumerate() {
                    let inv = 1.0 / lin[i];
                    grad -= row.transpose() * inv;
                    hess += row.transpose() * row * (inv * inv);
                }
                let inv_g = -1.0 / g;
                {
                    let mut gy = grad.rows_mut(0, self.n);
                    gy += &dg * inv_g;
                }
                {
                    let mut hy = hess.view_mut((0, 0), (self.n, self.n));
                    hy += &d2g * inv_g + (&dg * dg.transpose()) * (inv_g * inv_g);
                }
                let step = match hess.clone().cholesky() {
                    Some(ch) => ch.solve(&(-&grad)),
                    None => hess
                        .clone()
                        .lu()
                        .solve(&(-&grad))
                        .ok_or_else(|| RiskError::NoConvergence("singular barrier Hessian".into()))?,
                };
                let decrement = -grad.dot(&step);
                if !(decrement.is_finite()) {
                    return Err(RiskError::NoConvergence("non-finite Newton step".into()));
                }
                if decrement / 2.0 <= 1e-12 {
                    break;
                }
                let f0 = self.merit(t, &z);
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..80 {
                    let cand = &z + &step * alpha;
                    if self.strictly_feasible(&cand) && self.merit(t, &cand) <= f0 - 0.25 * alpha * decrement {
                        z = cand;
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    break;
                }
                if z.amax() > UNBOUNDED_LEVERAGE * z_scale {
                    return Err(RiskError::UnboundedObjective);
                }
            }
            let gap = m_constraints / t;
            if gap <= 1e-10 * (1.0 + self.c.dot(&z).abs()) || t > 1e16 {
                return Ok(BarrierResult { z, gap, iterations });
            }
            t *= 20.0;
        }
    }
}

/// Strictly interior starting exposure above `lower` with `budget < 0`.
fn interior_start(budget: &VarBudget, lower: &DVector<f64>) -> Option<DVector<f64>> {
    if budget.value(lower) >= 0.0 {
        return None;
    }
    let mut tau = 0.5;
    for _ in 0..60 {
        let y = lower * (1.0 + tau);
        if budget.value(&y) < 0.0 {
            return Some(y);
        }
        tau *= 0.5;
    }
    None
}

/// Pushes `y` along the ray from `lower` until the budget binds, when that
/// raises `mu^T y`.
fn polish_on_ray(budget: &VarBudget, lower: &DVector<f64>, y: DVector<f64>) -> DVector<f64> {
    let d = &y - lower;
    if budget.mu.dot(&d) <= 0.0 || budget.value(&y) >= 0.0 {
        return y;
    }
    let f = |tau: f64| budget.value(&(lower + &d * tau));
    match bisect_upper(&f, 1.0) {
        Ok(tau) => lower + &d * tau,
        Err(_) => y,
    }
}

/// Leverage factors maximizing the chosen objective subject to
/// `VaR_alpha(l_w^T R) <= 1` and `l >= 1`.
pub fn optimize_leverage(
    model: &NormalModel,
    weights: &[f64],
    alpha: TailLevel,
    objective: LeverageObjective,
) -> Result<LeverageSolution> {
    model.validate()?;
    let n = model.dim();
    if weights.len() != n {
        return Err(RiskError::DimensionMismatch { expected: n, got: weights.len() });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(RiskError::InvalidParameter("weights must be positive".into()));
    }
    let budget = VarBudget { q: alpha.z(), mu: model.mu_vector(), sigma: model.sigma_matrix() };
    let w = DVector::from_column_slice(weights);
    let at_one = budget.value(&w);
    if at_one > 0.0 {
        return Err(RiskError::Infeasible(at_one + 1.0));
    }

    let (lower, gap, iterations) = match objective {
        LeverageObjective::MaxMean => (w.clone(), 0.0, 0),
        LeverageObjective::MaxMin => {
            let t_star = max_min_level(&budget, &w)?;
            (&w * (t_star.0 * (1.0 - 1e-9)), t_star.1, t_star.2)
        }
    };

    let (y, gap, iterations) = match interior_start(&budget, &lower) {
        None => (lower.clone(), gap, iterations),
        Some(start) => {
            let barrier = Barrier {
                budget: &budget,
                n,
                c: -&budget.mu,
                a: DMatrix::identity(n, n),
                b: lower.clone(),
            };
            let res = barrier.solve(start)?;
            (polish_on_ray(&budget, &lower, res.z), gap.max(res.gap), iterations + res.iterations)
        }
    };

    let leverage: Vec<f64> = y.iter().zip(weights).map(|(e, w)| (e / w).max(1.0)).collect();
    let exposure: Vec<f64> = leverage.iter().zip(weights).map(|(l, w)| l * w).collect();
    let params = model.portfolio_params(&exposure)?;
    let var = var_normal(params, alpha);
    let expected_return = params.mu;
    let objective_value = match objective {
        LeverageObjective::MaxMean => expected_return,
        LeverageObjective::MaxMin => leverage.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    Ok(LeverageSolution {
        asset_ids: model.asset_ids.clone(),
        leverage,
        objective_value,
        expected_return,
        var,
        constraint_residual: var - 1.0,
        duality_gap: gap,
        iterations,
    })
}

/// Largest `t` with some `y >= t w` inside the budget, via a barrier solve
/// over `(y, t)` maximizing `t`.
fn max_min_level(budget: &VarBudget, w: &DVector<f64>) -> Result<(f64, f64, usize)> {
    let n = w.len();
    let start_y = interior_start(budget, w).ok_or(RiskError::Infeasible(budget.value(w) + 1.0))?;
    let t0 = start_y.iter().zip(w.iter()).map(|(y, w)| y / w).fold(f64::INFINITY, f64::min) * (1.0 - 1e-3);
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(&start_y);
    z[n] = t0;
    let mut a = DMatrix::zeros(n, n + 1);
    for k in 0..n {
        a[(k, k)] = 1.0;
        a[(k, n)] = -w[k];
    }
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let barrier = Barrier { budget, n, c, a, b: DVector::zeros(n) };
    let res = barrier.solve(z)?;
    let y = res.z.rows(0, n).into_owned();
    let t = y.iter().zip(w.iter()).map(|(y, w)| y / w).fold(f64::INFINITY, f64::min);
    if t < 1.0 {
        return Err(RiskError::Infeasible(budget.value(w) + 1.0));
    }
    Ok((t, res.gap, res.iterations))
}

/// Empirical alpha-quantile of `l_w^T R` over a scenario set. Values below
/// -1 mean the leverage constraint was breached in the tail.
pub fn delta_quantile_check(portfolio: &LeveragedPortfolio, scenarios: &ScenarioSet, alpha: TailLevel) -> Result<f64> {
    portfolio.validate()?;
    let exposure = portfolio.exposure_in(scenarios.asset_ids()).map_err(|e| match e {
        RiskError::UnknownAsset(_) => {
            RiskError::DimensionMismatch { expected: portfolio.asset_ids.len(), got: scenarios.n_assets() }
        }
        other => other,
    })?;
    let returns = portfolio_scenarios(scenarios, &exposure)?;
    empirical_quantile(&returns, alpha)
}
