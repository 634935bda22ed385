//! Conductivity reconstruction from power-density internal functionals.

pub mod acquisition;
pub mod algebra;
pub mod error;
pub mod field;
pub mod forward;
pub mod grid;
pub mod io;
pub mod ops;
pub mod phantom;
pub mod recon2d;
pub mod recon3d;
pub mod stats;

pub use error::{Error, Result};
pub use field::{MatrixField, MultiField, ScalarField, VectorField};
pub use grid::{Grid, Segment};
