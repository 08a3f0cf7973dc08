//! Crate-wide error type.

use alloc::boxed::Box;
use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A matrix or vector was constructed with NaN/Inf entries.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Shape mismatch between operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Pivoted QR found a diagonal of R below `rtol * |R00|`; the system is
    /// numerically rank deficient.
    #[error("rank deficient at pivot {pivot} (|r| = {diag:e})")]
    RankDeficient { pivot: usize, diag: f64 },

    /// `eig_min_symmetric` was fed a matrix that is not symmetric.
    #[error("matrix not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),

    /// A user-supplied field evaluated outside its domain (NaN/Inf result).
    #[error("domain error: {0}")]
    Domain(String),

    /// The strengthened Legendre-Clebsch condition fails: `H_uu` is not
    /// positive definite at the evaluation point.
    #[error("SLC violation: eig_min(H_uu) = {eig_min:e}")]
    SlcViolation { eig_min: f64 },

    /// The Gamma matrix of the singular-control system is numerically
    /// singular; the second part of the SLC breaks down here.
    #[error("singular arc degenerate: |det Gamma| = {det:e}")]
    SingularArcDegenerate { det: f64 },

    /// Feedback Newton failed to reach the joint tolerance.
    #[error("feedback iteration did not converge after {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },

    /// Two grid-indexed objects do not share a grid.
    #[error("grid mismatch")]
    GridMismatch,

    /// The integrator needs at least 4 steps.
    #[error("too few integration steps ({0})")]
    StepsTooFew(usize),

    /// A phase of the transformed problem collapsed below the minimal
    /// admissible duration.
    #[error("structure degenerate: phase {phase} has span {span:e}")]
    StructureDegenerate { phase: usize, span: f64 },

    /// The direct-transcription oracle produced a non-finite cost.
    #[error("direct solve diverged")]
    Diverged,

    /// Arc detection found nothing to shoot at.
    #[error("no arc structure detected")]
    NoStructure,

    /// Not enough data points for an order estimate.
    #[error("insufficient data for order estimate")]
    InsufficientData,

    /// Bad model parameters.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Closed-form singular control evaluated at a degenerate point.
    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    /// Gauss-Newton hit a rank-deficient Jacobian.
    #[error("singular Jacobian in Gauss-Newton")]
    SingularJacobian,

    /// Armijo backtracking could not find a decreasing step.
    #[error("line search failed")]
    LineSearchFail,

    /// Failure inside a trajectory integration, with the time attached.
    #[error("integration failed at t = {t}: {source}")]
    Integration {
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the integration time at which it occurred.
    pub fn at_time(self, t: f64) -> Error {
        Error::Integration {
            t,
            source: Box::new(self),
        }
    }
}
