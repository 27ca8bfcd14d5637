//! Numerical building blocks for pathwise regularization-by-noise
//! experiments on the evolutionary p-Laplace system.

pub mod averaging;
pub mod diagnostics;
pub mod error;
pub mod lattice;
pub mod numeric;
pub mod occupation;
pub mod paths;
pub mod plaplace;
pub mod potential;
pub mod sewing;
pub mod tridiagonal;

pub use error::{Error, Result};
pub use lattice::{GridField, Lattice};
pub use paths::{SamplePath, TimeGrid};

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
