//! Structured-grid finite element machinery: mesh topology, shape function
//! tables, and DOF numbering with boundary restrictions.

pub mod mesh;
pub mod shape;
pub mod space;

pub use mesh::{EdgeRef, Mesh, MeshError, Side};
pub use shape::{EdgeShapes, GpShapes, ShapeTable};
pub use space::{DofTarget, FieldSpace, Restrictions, SpaceError};
