use std::fmt;

/// Library-wide error type.
///
/// Numerical failures carry enough context (residuals, iteration counts,
/// offending values) to diagnose a run from the message alone.
#[derive(Debug)]
pub enum Error {
    /// A caller-supplied argument was rejected before any numerics ran.
    InvalidArgument(String),
    /// Two tensors had incompatible shapes for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An elementwise division hit an exactly-zero denominator.
    DivisionByZero(String),
    /// An iterative procedure failed to converge.
    NumericalFailure(String),
    /// The algebraic Jacobian dg/dz is singular or nearly so, which breaks
    /// the index-1 assumption the whole pipeline rests on.
    IndexViolation(String),
    /// A descriptor mass matrix has full rank: the system is a plain ODE
    /// after a change of variables, not a DAE.
    NotADae(String),
    /// The numerical rank of a mass matrix could not be decided at the
    /// working tolerance.
    AmbiguousRank(String),
    /// An implicit integration step did not converge.
    StepFailure { t: f64, residual: f64 },
    /// A query time lies outside the span of a stored trajectory.
    OutOfRange { t: f64, lo: f64, hi: f64 },
    /// Training produced a non-finite loss or gradient.
    TrainingDivergence {
        outer: usize,
        epoch: usize,
        detail: String,
    },
    /// A network rollout produced a non-finite state.
    RolloutDivergence { step: usize, detail: String },
    /// A relative-error denominator vanished for the named state.
    DegenerateDenominator(String),
    Io(std::io::Error),
    /// A text artifact (tableau, checkpoint, CSV) failed to parse.
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "shape mismatch in {op}: {left:?} vs {right:?}")
            }
            Error::DivisionByZero(ctx) => write!(f, "division by zero in {ctx}"),
            Error::NumericalFailure(msg) => write!(f, "numerical failure: {msg}"),
            Error::IndexViolation(msg) => write!(f, "index-1 assumption violated: {msg}"),
            Error::NotADae(msg) => write!(f, "not a DAE: {msg}"),
            Error::AmbiguousRank(msg) => write!(f, "ambiguous mass-matrix rank: {msg}"),
            Error::StepFailure { t, residual } => write!(
                f,
                "implicit step at t = {t} failed to converge (residual {residual:.3e}); \
                 try a smaller step size"
            ),
            Error::OutOfRange { t, lo, hi } => {
                write!(f, "t = {t} outside trajectory span [{lo}, {hi}]")
            }
            Error::TrainingDivergence {
                outer,
                epoch,
                detail,
            } => write!(
                f,
                "training diverged at outer iteration {outer}, epoch {epoch}: {detail}"
            ),
            Error::RolloutDivergence { step, detail } => {
                write!(f, "rollout diverged at step {step}: {detail}")
            }
            Error::DegenerateDenominator(state) => {
                write!(
                    f,
                    "relative error undefined: reference norm for state {state} is zero"
                )
            }
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
