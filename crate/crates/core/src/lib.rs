//! Library for simulating gravitationally differentiating, compressible,
//! self-gravitating viscous fluids in a fully Eulerian reference-map
//! formulation, with a multicomponent diffusion-reaction extension and a
//! built-in energy-dissipation audit.

pub mod config;
pub mod constitutive;
pub mod diagnostics;
pub mod error;
pub mod gravity;
pub mod grid;
pub mod integrator;
pub mod kinematics;
pub mod mixture;
pub mod output;
pub mod runner;
pub mod scenario;

pub use error::{Monitor, Result, SimError};
