use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("origin is not an interior point of the polytope (row {row} has f = {value})")]
    OriginNotInterior { row: usize, value: f64 },

    #[error("zonotope has {generators} generators, more than the vertex cap of {cap}; reduce generators first")]
    TooManyGenerators { generators: usize, cap: usize },

    #[error("LMI problem has {unknowns} scalar unknowns, more than the cap of {cap}")]
    TooManyUnknowns { unknowns: usize, cap: usize },

    #[error("LMI block {block} is not symmetric (asymmetry {asymmetry:.3e})")]
    NonSymmetricBlock { block: usize, asymmetry: f64 },

    #[error("no admissible K: every (rho, mu, lambda) combination was infeasible")]
    NoAdmissibleGain,

    #[error("terminal synthesis infeasible for every lambda on the grid; try a larger horizon N (smaller L(N))")]
    TerminalInfeasible,

    #[error("pair (A, B) is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("constraints vanish at step {step}")]
    ConstraintsVanish { step: usize },

    #[error("terminal set vanishes (shrink radius {radius:.6} >= 1); increase N")]
    TerminalSetVanishes { radius: f64 },

    #[error("terminal equality constraint requires a negligible L(N) (tail norm {tail:.3e} > threshold {threshold:.3e})")]
    TailNotNegligible { tail: f64, threshold: f64 },

    #[error("design failed its assumption audit: {0}")]
    AuditFailed(String),

    #[error("{0} did not converge within {1} iterations")]
    NoConvergence(&'static str, usize),

    #[error("optimal control problem infeasible at state {0}")]
    Infeasible(String),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }
}
