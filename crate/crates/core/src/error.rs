//! Crate-wide error type.

use alloc::string::String;

/// Errors produced by specification validation, sampling and solving.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A numeric argument was NaN or infinite.
    #[error("non-finite input")]
    NonFiniteInput,

    /// Convex conjugates are only defined on the nonnegative half-line.
    #[error("conjugate domain is nonnegative reals")]
    ConjugateDomain,

    /// A specification invariant does not hold.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// Vector or batch dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Acceptance-rejection observed a weight above the declared envelope.
    #[error("bound violated: observed weight {observed} exceeds envelope bound {bound}")]
    BoundViolated { observed: f64, bound: f64 },

    /// Acceptance-rejection is accepting too rarely to make progress.
    #[error("envelope too loose: acceptance rate {rate:e} after {candidates} candidate draws")]
    EnvelopeTooLoose { rate: f64, candidates: usize },

    /// The training objective blew past the divergence ceiling.
    #[error(
        "objective diverged at iteration {iteration}: running mean {value:e} exceeds ceiling \
         {ceiling:e} (typical causes: marginals not in convex order for martingale problems, \
         or a sampling measure incompatible with the constraint set)"
    )]
    Diverged {
        iteration: usize,
        value: f64,
        ceiling: f64,
    },

    /// A non-finite value appeared while evaluating the objective.
    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    /// The linear program has no feasible coupling.
    #[error("infeasible linear program: {0}")]
    Infeasible(String),

    /// The linear program is unbounded (malformed instance).
    #[error("unbounded linear program")]
    Unbounded,
}

pub type Result<T> = core::result::Result<T, Error>;
