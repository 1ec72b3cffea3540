use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("scalar solver did not converge after {iterations} iterations (bracket [{lo}, {hi}])")]
    ScalarSolver { iterations: usize, lo: f64, hi: f64 },

    #[error("dual coordinate {coordinate} failed: {source}")]
    Coordinate {
        coordinate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("graph generation failed: {0}")]
    Generation(String),

    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("protocol error: agent {agent} has no {kind} message from neighbor {neighbor}")]
    Protocol {
        agent: usize,
        neighbor: usize,
        kind: &'static str,
    },

    #[error("divergence at iteration {iteration}: agent {agent} produced a non-finite {variable}")]
    Divergence {
        iteration: usize,
        agent: usize,
        variable: &'static str,
    },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("bound not applicable: {0}")]
    BoundNotApplicable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
