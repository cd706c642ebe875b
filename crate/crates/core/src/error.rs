//! Error type shared by all solver modules.

use crate::market::NodeId;

/// Errors surfaced by tree construction, validation and the solvers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed tree spec: {0}")]
    MalformedSpec(String),

    #[error("non-finite stock value at node {0}")]
    NonFiniteStock(NodeId),

    #[error("claim or option payoff contains a non-finite value")]
    NonFiniteClaim,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("linear program failed: {0}")]
    LpFailure(String),

    #[error("diverging iterates: {0}")]
    Diverging(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("duality gap exceeded: {0}")]
    GapExceeded(String),

    #[error("evaluation budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("node {0} has no zero-move child and insertion is disabled")]
    NoFlatChild(NodeId),

    #[error("arbitrage detected (witness h = {witness:?}); pass force to solve anyway")]
    Arbitrage { witness: Vec<f64> },

    #[error("at node {node}: {source}")]
    AtNode {
        node: NodeId,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the id of the tree node it occurred at.
    pub fn at_node(self, node: NodeId) -> Self {
        match self {
            Error::AtNode { .. } => self,
            other => Error::AtNode {
                node,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
