//! artikin learns probabilistic kinematic models of articulated objects —
//! doors, drawers, linkages — from noisy observations of their part poses.
//!
//! The pipeline, bottom to top:
//!
//! - [`se3`]: rigid-body pose arithmetic (position + unit quaternion).
//! - [`obs`]: a Gaussian-plus-uniform mixture observation model that is
//!   robust to outlier pose detections.
//! - [`model`]: candidate link models between two parts — rigid, prismatic,
//!   revolute, and a Gaussian-process model for unforeseen mechanisms.
//! - [`estimate`]: robust fitting (MLESAC sampling, quasi-Newton refinement,
//!   EM outlier re-estimation) and BIC-based model selection.
//! - [`graph`]: kinematic structure discovery over multi-part objects —
//!   spanning trees, closed kinematic chains, and the object's effective
//!   number of degrees of freedom.
//! - [`prior`]: a database of previously learned models that transfers
//!   experience to new, partially observed objects.
//! - [`sim`]: a ground-truth simulator with a library of named scenarios,
//!   used for evaluation and testing.
//! - [`io`]: deterministic, human-diffable text formats for trajectories,
//!   models, graphs, databases, and reports.

pub mod estimate;
pub mod exec;
pub mod graph;
pub mod io;
pub mod model;
pub mod obs;
pub mod optim;
pub mod prior;
pub mod se3;
pub mod sim;

/// Errors produced by fitting, geometry, and file handling.
///
/// The coarse categories map onto distinct process exit codes in the CLI:
/// invalid inputs (bad arguments, malformed files) are distinguished from
/// numerical failures (degenerate geometry, singular decompositions).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input validation failed: malformed value, inconsistent sizes,
    /// unknown name, or an out-of-range parameter.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A parse error in one of the text file formats.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Not enough observations for the requested operation.
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    /// Geometrically degenerate input (collinear points, rank-deficient
    /// matrix, zero-length axis).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// A numerical operation failed (singular system, non-finite value).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Whether this build parallelizes data-parallel loops with rayon.
///
/// Results are identical either way; the feature only affects wall-clock
/// time. Exposed so benchmarks and diagnostics can report the active mode.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
