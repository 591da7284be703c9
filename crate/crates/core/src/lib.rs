//! Surface finite element solver for two-phase fluid deformable surfaces.
//!
//! The library evolves a closed surface, a conserved phase field and a
//! tangential+normal velocity field under the coupled incompressible
//! surface Navier-Stokes / Cahn-Hilliard model with Helfrich bending.
//! A time step advances in four stages: a semi-implicit Cahn-Hilliard
//! solve, a coupled Navier-Stokes + curvature + surface-update solve,
//! the parametrization update, and a nodal lift of all fields onto the
//! new surface.
//!
//! Modules follow the pipeline bottom-up: [`mesh`] (reference
//! triangulation), [`geometry`] (isoparametric surface and pointwise
//! differential operators), [`fem`] (spaces, assembly, sparse solves),
//! [`physics`] (material laws, energies, initial data), [`ch_step`] and
//! [`nsmesh_step`] (the two linear systems per step), [`timeloop`]
//! (orchestration and model variants), [`diagnostics`] (error norms,
//! convergence orders, energy monitor) and [`io`] (config, VTU and CSV
//! output).

pub mod ch_step;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod nsmesh_step;
pub mod overdamped;
pub mod physics;
pub mod timeloop;
pub mod vec3;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
