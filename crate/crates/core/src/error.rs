use thiserror::Error;

/// Errors produced anywhere in the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hurwitz (max eigenvalue real part {max_real:.3e})")]
    NotHurwitz { max_real: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("measurement noise covariance D D^T is singular or ill-conditioned (cond {cond:.3e})")]
    SingularNoise { cond: f64 },

    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),

    #[error("Riccati integration blew up at t = {t}")]
    Blowup { t: f64 },

    #[error("matrix is not skew-symmetric (|Z + Z^T| = {asym:.3e})")]
    NotSkew { asym: f64 },

    #[error("structure matrix Z is singular (|det Z| = {det:.3e})")]
    SingularZ { det: f64 },

    #[error("similarity transform is singular or ill-conditioned")]
    SingularV,

    #[error("cavity needs at least one coupling rate")]
    EmptyKappas,

    #[error("duration must be positive and cover at least one sample")]
    NonPositiveDuration,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("identified drift matrix is not Hurwitz (max eigenvalue real part {max_real:.3e})")]
    UnstableEstimate { max_real: f64 },

    #[error("one-step predictor is unstable (spectral radius {radius:.4})")]
    UnstablePredictor { radius: f64 },

    #[error("principal matrix logarithm undefined: {0}")]
    LogUndefined(String),

    #[error("FPE needs more samples than parameters (N = {n}, d = {d})")]
    DegenerateN { n: usize, d: usize },

    #[error("output channel {0} has zero variance")]
    ZeroVarianceChannel(usize),

    #[error("no feasible point found during bisection")]
    NoFeasiblePointFound,

    #[error("no descent step keeps Z invertible")]
    ZSingularOnPath,

    #[error("rank-constrained solver stalled at residual {residual:.3e} after {iterations} iterations")]
    NumericalStall { residual: f64, iterations: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical routines, as opposed to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotHurwitz { .. }
                | Error::SingularNoise { .. }
                | Error::NoStabilizingSolution(_)
                | Error::Blowup { .. }
                | Error::SingularZ { .. }
                | Error::SingularV
                | Error::UnstableEstimate { .. }
                | Error::UnstablePredictor { .. }
                | Error::LogUndefined(_)
                | Error::NoFeasiblePointFound
                | Error::ZSingularOnPath
                | Error::NumericalStall { .. }
        )
    }

    /// Variant name, for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotHurwitz { .. } => "NotHurwitz",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::SingularNoise { .. } => "SingularNoise",
            Error::NoStabilizingSolution(_) => "NoStabilizingSolution",
            Error::Blowup { .. } => "Blowup",
            Error::NotSkew { .. } => "NotSkew",
            Error::SingularZ { .. } => "SingularZ",
            Error::SingularV => "SingularV",
            Error::EmptyKappas => "EmptyKappas",
            Error::NonPositiveDuration => "NonPositiveDuration",
            Error::InsufficientData(_) => "InsufficientData",
            Error::UnstableEstimate { .. } => "UnstableEstimate",
            Error::UnstablePredictor { .. } => "UnstablePredictor",
            Error::LogUndefined(_) => "LogUndefined",
            Error::DegenerateN { .. } => "DegenerateN",
            Error::ZeroVarianceChannel(_) => "ZeroVarianceChannel",
            Error::NoFeasiblePointFound => "NoFeasiblePointFound",
            Error::ZSingularOnPath => "ZSingularOnPath",
            Error::NumericalStall { .. } => "NumericalStall",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Config(_) => "Config",
            Error::MissingArtifacts(_) => "MissingArtifacts",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
