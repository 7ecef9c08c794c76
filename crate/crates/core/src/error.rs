use thiserror::Error;

pub type Result<T> = std::result::Result<T, RiskError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: non-positive price {price} on {date}")]
    NonPositivePrice { line: u64, date: String, price: f64 },
    #[error("line {line}: duplicate date {date}")]
    DuplicateDate { line: u64, date: String },
    #[error("series {0} needs at least two prices")]
    SeriesTooShort(String),
    #[error("return series share no common dates")]
    NoCommonDates,
    #[error("cannot align simple and log returns")]
    MixedKinds,
    #[error("tail level must lie in (0, 0.5], got {0}")]
    InvalidTailLevel(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("probabilities must be non-negative and sum to 1 (sum = {0})")]
    InvalidDistribution(f64),
    #[error("empty sample")]
    EmptySample,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("covariance is not positive semidefinite (pivot {pivot} at index {index})")]
    NotPositiveSemidefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("option expires within the holding horizon ({expiry_years} y <= {horizon_years} y)")]
    ExpiredWithinHorizon { expiry_years: f64, horizon_years: f64 },
    #[error("option price is zero; returns are undefined")]
    ZeroOptionPrice,
    #[error("ES gap never reaches {target} on x in [{lo:e}, {hi}] (range [{g_lo:e}, {g_hi:e}])")]
    NoRoot { target: f64, lo: f64, hi: f64, g_lo: f64, g_hi: f64 },
    #[error("ES gap is not monotone on the bracket")]
    NonMonotoneGap,
    #[error("leverage problem infeasible: l = 1 already breaches the VaR budget (VaR = {0})")]
    Infeasible(f64),
    #[error("leverage objective is unbounded")]
    UnboundedObjective,
    #[error("optimizer failed to converge: {0}")]
    NoConvergence(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("scenario data unavailable: {0}")]
    ScenarioUnavailable(String),
    #[error("scenario file: {0}")]
    ScenarioFormat(String),
}
