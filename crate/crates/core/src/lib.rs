//! Finite-element simulation of the wave equation under saturated Dirichlet
//! boundary velocity feedback, posed in `L²(Ω) × H⁻¹(Ω)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod elliptic;
pub mod error;
pub mod feedback;
pub mod mesh;
pub mod sparse;
pub mod stepper;

pub use elliptic::DiscreteOperators;
pub use error::{Error, Result};
pub use mesh::{build_annulus_mesh, build_unit_square_mesh, check_geometric_assumptions, Mesh, Region};
pub use stepper::{ResolventSolver, Scheme, SolverConfig, SolverMethod, State, StepRecord, Stepper};
