use std::fmt;

/// Error type shared by every module in this crate.
#[derive(Debug, Clone)]
pub enum CoreError {
    /// A constructor argument is outside its documented range.
    InvalidArgument(String),
    /// Two objects that must share a mesh (or mesh pair) do not.
    MeshMismatch(String),
    /// A function evaluation produced a non-finite value.
    NonFinite(String),
    /// A factorization or linear solve failed, with a conditioning report.
    SolverFailure(String),
    /// An eigenvalue computation did not converge or produced invalid output.
    EigenFailure(String),
    /// A sampled simulation failed; records which point and shift.
    SampleFailure {
        shift_index: usize,
        point_index: usize,
        message: String,
    },
    /// I/O error wrapper (serialization of offline sets and similar).
    Io(String),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            CoreError::MeshMismatch(m) => write!(f, "mesh mismatch: {m}"),
            CoreError::NonFinite(m) => write!(f, "non-finite value: {m}"),
            CoreError::SolverFailure(m) => write!(f, "linear solver failure: {m}"),
            CoreError::EigenFailure(m) => write!(f, "eigensolver failure: {m}"),
            CoreError::SampleFailure {
                shift_index,
                point_index,
                message,
            } => write!(
                f,
                "sample evaluation failed at shift {shift_index}, point {point_index}: {message}"
            ),
            CoreError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CoreError {}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
