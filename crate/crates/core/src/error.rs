use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not antisymmetric (relative defect {defect:.3e})")]
    NotAntisymmetric { defect: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("constraints not second-class: Gram matrix of size {size} has rank {rank}")]
    NotSecondClass { size: usize, rank: usize },

    #[error("constraint `{0}` is linearly dependent on the ledger")]
    DependentConstraint(String),

    #[error("constraint chain did not close within {max_stage} stages")]
    RunawayChain { max_stage: usize },

    #[error("inconsistent constraints: {0}")]
    InconsistentConstraints(String),

    #[error("{first_class} first-class constraint(s) but {gauges} gauge condition(s) supplied")]
    GaugeCountMismatch { first_class: usize, gauges: usize },

    #[error("inadmissible gauge: {0}")]
    InadmissibleGauge(String),

    #[error("ledger contains non-second-class records; classify and gauge-fix before reducing")]
    NotFullySecondClass,

    #[error("degenerate elimination: pivot {pivot:.3e} below tolerance in constraint #{row}")]
    DegenerateElimination { row: usize, pivot: f64 },

    #[error("eigen-decomposition produced non-finite eigenvalues")]
    NonFiniteEigenvalue,

    #[error("critical point a = 1: closed-form frequency diverges")]
    CriticalPoint,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("initial state is off the constraint surface (residual {residual:.3e})")]
    OffSurface { residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
