//! Reference mesh, domain mappings and assembly of the high-fidelity system.

pub mod assembly;
pub mod mapping;
pub mod mesh;
pub mod quadrature;

pub use assembly::{
    assemble, assemble_pencil, discrete_gradient, matrix_derivatives, AssembledSystem,
    MatrixDerivatives, DEFAULT_FD_STEP,
};
pub use mapping::{FamilyKind, MappingFamily, DEFAULT_BUMP_AMPLITUDE, DEFAULT_STRETCH_END};
pub use mesh::ReferenceMesh;
