//! Plane-strain finite-strain finite elements on structured quad grids,
//! with a density-based design parametrization in which voids are filled by
//! a soft regularized medium that transmits contact forces. On top of the
//! forward solver sits a monolithic optimizer that advances design and
//! state variables together through one coupled Newton iteration.

// Index-based loops mirror the tensor index notation of the element
// kernels; rewriting them around iterators obscures the math.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod equilibrium;
pub mod fem;
pub mod io;
pub mod material;
pub mod model;
pub mod optimizer;
pub mod scenario;
pub mod sparse;

pub use model::{DesignField, DrivenMode, MaterialParams, Model, ModelError, RegionKind, RegionSpec};
