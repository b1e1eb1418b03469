use thiserror::Error;

use crate::geometry::Site;

pub type Result<T> = std::result::Result<T, IdlaError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum IdlaError {
    /// An argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A count or state space that no longer fits.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A walk ran past its step budget. Exit times of finite sets are a.s.
    /// finite, so this points at a bug or an absurdly small budget.
    #[error("step budget of {budget} exceeded at {position} (started at {start})")]
    BudgetExceeded { budget: u64, start: Site, position: Site },

    /// A budget failure tagged with the replica that hit it.
    #[error("replica {replica} (seed {seed}, stream {stream_id:#x}): {source}")]
    InReplica {
        replica: u64,
        seed: u64,
        stream_id: u64,
        source: Box<IdlaError>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Monte Carlo frequencies that sit at 0 or 1 and cannot support a fit.
    #[error("insufficient resolution: {0}")]
    InsufficientResolution(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl IdlaError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        IdlaError::Domain(msg.into())
    }

    /// The error with replica context stripped.
    pub fn root(&self) -> &IdlaError {
        match self {
            IdlaError::InReplica { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn capacity(msg: impl Into<String>) -> Self {
        IdlaError::Capacity(msg.into())
    }
}
