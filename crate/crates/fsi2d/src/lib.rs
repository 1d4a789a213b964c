//! A 2D finite element solver and verification harness for the linear
//! thin-structure fluid-structure interaction model on rectangular channels.
//!
//! The crate provides:
//! - structured triangular meshes with tagged interface/side boundaries ([`mesh`]),
//! - Taylor-Hood and MINI mixed finite element spaces with periodic or Dirichlet
//!   side conditions and the interface trace space ([`fem`]),
//! - sparse assembly of all bilinear forms of the coupled weak formulation,
//!   including the interface traction-trace couplings ([`forms`]),
//! - the stabilized partitioned (kinematically coupled) time stepper, a
//!   monolithic backward Euler reference stepper and a per-step energy
//!   monitor ([`scheme`]),
//! - discrete projection constructions and the coupled non-stationary Ritz
//!   projection realized numerically ([`projections`]),
//! - a manufactured solution with symbolically derived sources and the
//!   convergence-study orchestration ([`mms`]),
//! - the pressure-wave benchmark ([`bench`]),
//! - a command-line front end with CSV/VTK emission ([`cli`]).

pub mod bench;
pub mod cli;
pub mod fem;
pub mod forms;
pub mod linalg;
pub mod mesh;
pub mod mms;
pub mod projections;
pub mod scheme;
pub mod util;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported quadrature degree {requested}; available degrees: 1..={max}")]
    UnsupportedDegree { requested: usize, max: usize },
    #[error("index out of range: ({row}, {col}) for a {nrows}x{ncols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("singular system in {context}")]
    SingularSystem { context: String },
    #[error("internal consistency error: {0}")]
    InternalConsistency(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
