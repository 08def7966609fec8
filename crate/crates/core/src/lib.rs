//! Numerical toolkit for convex Hamiltonian systems on flat phase spaces:
//! symplectic/antisymplectic matrix algebra, the fiberwise symmetry and its
//! linearization, round-trip (libration) orbit classification, reduced
//! linearized return maps, and conjugacy analysis of non-homogeneous
//! time-varying Hamiltonian linear systems.

pub mod config;
pub mod error;
pub mod hamsys;
pub mod io;
pub mod linsys;
pub mod ode;
pub mod orbits;
pub mod reduced;
pub mod symmetry;
pub mod sympmat;

pub use config::Tolerances;
pub use error::{Error, Result};
