//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised while building markets, solving backward equations or
/// running the brute-force references.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A market or driver parameter violates its domain.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    /// `lambda(t) * dt` left `[0, 1)` at some time step.
    #[error("default probability lambda*dt = {value} at step {step} is not in [0, 1); increase n_steps")]
    DefaultProbability { step: usize, value: f64 },

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    /// A per-node field does not match the tree it is used with.
    #[error("{what}: expected {expected} entries, got {got}")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The implicit step `y = e + g(t, y, z, k) dt` failed to converge.
    #[error("implicit step did not converge at node {node} (step {step}) after {iterations} iterations; dt is too large for the driver's Lipschitz constant")]
    NoConvergence {
        node: usize,
        step: usize,
        iterations: usize,
    },

    /// Brute-force enumeration was asked for a tree beyond the guard.
    #[error("stopping-rule enumeration supports at most {max} steps, tree has {n_steps}")]
    EnumerationGuard { n_steps: usize, max: usize },
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for numerical failures, false for input validation problems.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::NoConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
