use thiserror::Error;

use crate::lattice::ExclusionSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum Error {
    /// Exact enumeration was requested beyond the supported player count.
    #[error("{what}: {requested} members exceeds the exact-enumeration limit of {limit}{hint}")]
    Capacity {
        what: &'static str,
        requested: usize,
        limit: usize,
        hint: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    /// Shares were requested for a market whose total sales are zero.
    #[error("degenerate market: total sales are zero")]
    DegenerateMarket,

    #[error("singularity: {0}")]
    Singularity(String),

    /// An outcome evaluator failed on a specific exclusion set.
    #[error("evaluation failed at exclusion set {subset}: {source}")]
    Evaluation {
        subset: ExclusionSet,
        #[source]
        source: BoxError,
    },

    #[error("malformed diagram document: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
