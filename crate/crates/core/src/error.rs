use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is singular or ill-conditioned (condition estimate {cond:.3e})")]
    Singular { cond: f64 },

    #[error("eigenvalue {re:.6e}{im:+.6e}i lies on the branch cut of the principal logarithm")]
    BranchCut { re: f64, im: f64 },

    #[error("non-finite entry in matrix input")]
    NonFinite,

    #[error("background metric is not Hermitian positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("basis columns are linearly dependent")]
    RankDeficient,

    #[error("generators do not commute: |[G1, G2]| = {residual:.3e} exceeds {tol:.3e}")]
    NotCommuting { residual: f64, tol: f64 },

    #[error("connection is not flat: residual {residual:.3e} exceeds {tol:.3e}")]
    NotFlat { residual: f64, tol: f64 },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("gauge field ill-conditioned at point {point} (condition estimate {cond:.3e})")]
    GaugeConditioning { point: usize, cond: f64 },

    #[error("flow failure at t = {t:.6e}: {reason}")]
    Flow { t: f64, reason: String },

    #[error("missing gauge tracking data: {0}")]
    MissingGauge(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("decomposition did not converge: {0}")]
    NoConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
