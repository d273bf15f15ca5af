//! Connected, compact superpixels on noisy gray-scale images.
//!
//! The image is decomposed into rectangular patches; within each patch a
//! discrete Potts model (piecewise-constant L1 fitting with a boundary-length
//! penalty) is formulated as a mixed-integer linear program, strengthened
//! with multicut cycle inequalities, and solved by a built-in branch-and-cut
//! solver. Segmentation and denoising come out of the same solve.
//!
//! Modules:
//! - [`grid`]: grid graphs, edge labelings, label maps, multicut closure.
//! - [`model`]: MILP construction for the Potts and multicut formulations.
//! - [`solver`]: LP relaxation engine, branch-and-cut, exhaustive oracle.
//! - [`pipeline`]: patch decomposition and whole-image segmentation.
//! - [`imaging`]: PGM/PPM I/O, normalization, noise, overlays.
//! - [`metrics`]: under-segmentation error, boundary recall, compactness.
//! - [`cli`]: command-line front end.

pub mod cli;
pub mod error;
pub mod grid;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod solver;

pub use error::Error;
