//! Error type shared by every module of the solver.

use thiserror::Error;

/// Everything that can go wrong while modelling, parsing or solving.
#[derive(Debug, Error)]
pub enum RnnalError {
    /// `A Aᵀ` has a Cholesky pivot below `1e-12 · max diag`; the constraint
    /// matrix does not have full row rank.
    #[error("constraint matrix is rank deficient: pivot {pivot:e} below threshold {threshold:e}")]
    RankDeficient { pivot: f64, threshold: f64 },

    /// Operand shapes do not agree.
    #[error("dimension mismatch in {context}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    /// The instance violates a modelling invariant (negative right-hand side,
    /// asymmetric cost, index out of range, ...).
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    /// Marginals of a Gromov–Wasserstein instance are not probability vectors.
    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    /// An edge appears twice in an incompatibility list.
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    /// Malformed input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Entries `(i, j)` and `(j, i)` of a symmetric matrix disagree.
    #[error("asymmetric entries at ({row}, {col}) (line {line})")]
    Asymmetry { row: usize, col: usize, line: usize },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// No feasible starting factor was found.
    #[error("feasible initialization failed after {attempts} attempts: {reason}")]
    InitFailed { attempts: usize, reason: String },

    /// The normal system `h_R h_R*` is numerically singular at the current point.
    #[error("normal system is singular: pivot {pivot:e} below threshold {threshold:e}")]
    SingularSystem { pivot: f64, threshold: f64 },

    /// The metric projection onto the variety could not be computed.
    #[error("retraction failed: {0}")]
    RetractionFailed(String),

    /// A binary row of the shifted factor vanished (an anchor point of the
    /// convexified projection problem).
    #[error("anchor row {row} has vanishing norm")]
    AnchorDegenerate { row: usize },

    /// An iterative method hit its iteration cap.
    #[error("maximum iterations ({iterations}) reached")]
    MaxIterations { iterations: usize },

    /// The line search produced a non-finite objective value.
    #[error("line search failed: {0}")]
    LineSearchFailed(String),

    /// A gradient was requested for a factor other than the one last evaluated.
    #[error("objective cache is stale: evaluate the objective at this point first")]
    StaleCache,

    /// The iterative eigensolver did not converge.
    #[error("eigensolver did not converge")]
    EigFailed,

    /// Backtracking along a negative-curvature direction did not decrease
    /// the objective.
    #[error("saddle escape stalled after {halvings} step halvings")]
    EscapeStalled { halvings: usize },

    /// The reference splitting solver did not reach its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// The instance exceeds the size cap of a brute-force or dense routine.
    #[error("instance too large: n = {n} exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },

    /// The instance has no feasible point.
    #[error("instance is infeasible")]
    Infeasible,
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, RnnalError>;
