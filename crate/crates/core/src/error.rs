use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}` {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("no periods")]
    NoPeriods,

    #[error("negative budget {budget} for operator {operator} in region {region}")]
    NegativeBudget {
        operator: usize,
        region: usize,
        budget: f64,
    },

    #[error("non-finite capacity for client {client}")]
    NonFiniteCapacity { client: usize },

    #[error("dual bisection did not converge within {iterations} iterations")]
    BisectionExhausted { iterations: usize },

    #[error("projection stalled after {sweeps} sweeps (last move {last_move:e})")]
    ProjectionStalled { sweeps: usize, last_move: f64 },

    #[error("oracle scale exceeded: {0}")]
    OracleScaleExceeded(String),

    #[error("formula requires arrivals in every cell")]
    EmptyCell,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{module} failed in period {period}: {source}")]
    Solver {
        module: &'static str,
        period: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_period(self, module: &'static str, period: usize) -> Self {
        match self {
            e @ Error::Solver { .. } => e,
            e => Error::Solver {
                module,
                period,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by bad input rather than a solver failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig { .. } | Error::ConfigParse(_) | Error::Shape(_)
        )
    }
}
