//! Stochastic Galerkin and Monte-Carlo space-time finite elements for the heat
//! equation with a Gaussian random diffusion coefficient.

pub mod chaos;
pub mod error;
pub mod quadrature;

pub use error::{Error, Result};
pub mod sparse;
pub mod spatial_fem;
pub mod time_slab;
pub mod krylov;
pub mod sg_system;
pub mod benchmark;
pub mod monte_carlo;
