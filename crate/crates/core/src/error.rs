use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("case file line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid is disconnected: bus {0} is not reachable from the market bus")]
    Disconnected(usize),

    #[error("singular susceptance matrix")]
    SingularSystem,

    #[error("injections do not balance: net {net} kW")]
    Unbalanced { net: f64 },

    #[error("storage target unreachable: bounds [{lower}, {upper}] kW at slice {slice}")]
    UnreachableTarget { slice: usize, lower: f64, upper: f64 },

    #[error("dispatch {power} kW outside [{lower}, {upper}] kW")]
    DispatchOutOfBounds { power: f64, lower: f64, upper: f64 },

    #[error("committed power {power} kW outside aggregate bounds [{lower}, {upper}] kW")]
    AllocationOutOfBounds { power: f64, lower: f64, upper: f64 },

    #[error("min-cost flow infeasible: {0}")]
    FlowInfeasible(String),

    #[error("quadratic program infeasible")]
    QpInfeasible,

    #[error("quadratic program Hessian is not positive definite")]
    QpNotConvex,

    #[error("quadratic program did not converge after {0} iterations")]
    QpNoConvergence(usize),

    #[error("offline model too large: {size} microgrid-slices exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("offline solver failed: {0}")]
    Solver(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("profile: {0}")]
    Profile(String),

    #[error("reports come from different scenarios: {0} vs {1}")]
    ScenarioMismatch(String, String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
