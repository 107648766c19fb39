//! Learning the parameters of explicit two-stage symplectic Nyström
//! integrators from trajectory data, so that a coarse time step reproduces
//! the fine-step dynamics of stiff Hamiltonian and Langevin systems.
//!
//! Layout:
//! - [`models`]: FPU chain, linear oscillator, Langevin parameters.
//! - [`integrators`]: the Nyström family, its Langevin splitting, BAOAB.
//! - [`datagen`]: fine-step data, down-sampling, noise coarsening.
//! - [`inference`]: losses, analytic gradients and the parameter fit.
//! - [`linear`]: closed-form analysis for the scalar linear oscillator.
//! - [`metrics`]: error and statistics used to compare trajectories.
//! - [`io`]: CSV trajectories and JSON manifests.

pub mod datagen;
pub mod error;
pub mod inference;
pub mod integrators;
pub mod io;
pub mod linear;
pub mod mat2;
pub mod metrics;
pub mod models;
pub mod optimize;
pub mod rng;

pub use error::{Error, Result};
