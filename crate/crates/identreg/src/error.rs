//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised by validation and numerical routines.
///
/// Variants fall into two families: input validation problems
/// (see [`Error::is_validation`]) and numerical failures on otherwise
/// well-formed input. The command-line front end maps the first family to
/// exit code 2 and the second to exit code 1.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A matrix that must be square is not.
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    /// Two operands have incompatible sizes.
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// Matrix asymmetry exceeds the symmetry tolerance.
    #[error("matrix is not symmetric: max |A_ij - A_ji| = {asymmetry:e} exceeds {threshold:e}")]
    NotSymmetric { asymmetry: f64, threshold: f64 },

    /// Smallest eigenvalue is too negative for a PSD matrix.
    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e} below {threshold:e}")]
    NotPsd { min_eigenvalue: f64, threshold: f64 },

    /// An entry is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The zero matrix was given where a nonzero one is required.
    #[error("matrix is zero")]
    ZeroMatrix,

    /// The zero vector was given where a nonzero one is required.
    #[error("vector is zero")]
    ZeroVector,

    /// A vector does not lie in the range of a matrix.
    #[error("vector is not in the range of the matrix: relative residual {relative_residual:e}")]
    NotInRange { relative_residual: f64 },

    /// A basis is not orthonormal within tolerance.
    #[error("basis is not orthonormal: deviation {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    /// Two subspaces cannot be compared.
    #[error("incompatible subspaces: ambient {ambient_a} vs {ambient_b}, dimension {dim_a} vs {dim_b}")]
    IncompatibleSubspaces {
        ambient_a: usize,
        ambient_b: usize,
        dim_a: usize,
        dim_b: usize,
    },

    /// A truncation level carries a zero cross-covariance vector.
    #[error("truncation level {level} has a zero cross-covariance vector")]
    DegenerateLevel { level: usize },

    /// No truncation level satisfies the conditioning threshold.
    #[error("no identifiable level: first level has sqrt condition number {first:e} >= tau = {tau}")]
    NoIdentifiableLevel { first: f64, tau: f64 },

    /// A reference quantity used for normalization is zero.
    #[error("reference matrix or vector is zero")]
    ZeroReference,

    /// A scalar or index argument lies outside its admissible range.
    #[error("{what} = {value} is out of range ({allowed})")]
    OutOfRange {
        what: &'static str,
        value: f64,
        allowed: &'static str,
    },

    /// A path never reaches the requested degrees of freedom.
    #[error("degrees of freedom {dof} are not attained by the path")]
    DofNotAttained { dof: usize },

    /// A projection annihilates the matrix or the vector.
    #[error("projection is degenerate: {0}")]
    DegenerateProjection(&'static str),

    /// An eigendecomposition does not reproduce its matrix.
    #[error("eigendecomposition residual {residual:e} exceeds {threshold:e}")]
    EigenFailure { residual: f64, threshold: f64 },

    /// A dataset without rows.
    #[error("dataset has no observations")]
    EmptyData,

    /// Moment order not above four.
    #[error("moment order q = {q} must exceed 4")]
    BadMomentOrder { q: f64 },

    /// A configuration value is invalid.
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    /// A closed form was requested outside its supported branch.
    #[error("unsupported branch: {0}")]
    UnsupportedBranch(String),

    /// A tolerance is not in (0, 1).
    #[error("invalid tolerance {name} = {value}: must lie in (0, 1)")]
    InvalidTolerance { name: &'static str, value: f64 },

    /// Reading or writing a file failed.
    #[error("i/o error: {0}")]
    Io(String),

    /// A file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True when the error stems from invalid user input rather than from
    /// a numerical failure on valid input.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NotInRange { .. }
                | Error::DegenerateLevel { .. }
                | Error::NoIdentifiableLevel { .. }
                | Error::DofNotAttained { .. }
                | Error::DegenerateProjection(_)
                | Error::ZeroMatrix
                | Error::ZeroVector
                | Error::ZeroReference
                | Error::NotOrthonormal { .. }
                | Error::EigenFailure { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
