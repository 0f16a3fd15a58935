use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cost table too short: need g({needed}) but table has {len} entries")]
    CostTableTooShort { needed: usize, len: usize },

    #[error("invalid cost value {value} for a batch of size {size}")]
    InvalidCost { value: f64, size: usize },

    #[error("invalid cost spec `{0}`")]
    InvalidCostSpec(String),

    #[error("invalid policy spec `{0}`")]
    InvalidPolicySpec(String),

    #[error("invalid rate spec `{0}`")]
    InvalidRateSpec(String),

    #[error("Γ undefined: {0}")]
    GammaUndefined(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty instance")]
    EmptyInstance,

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("oracle size limit: n = {n} exceeds {max}")]
    OracleSizeLimit { n: usize, max: usize },

    #[error("ILP constraint violated at node {node}: {detail}")]
    ConstraintViolation { node: usize, detail: String },

    #[error("non-terminating policy: no processing before horizon {horizon}")]
    NonTerminatingPolicy { horizon: f64 },

    #[error("arrival rate is identically zero")]
    ZeroRate,

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("no records to summarize")]
    EmptyRecords,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
