//! Multi-scale oscillatory approximate solutions of the incompressible
//! Euler and Navier–Stokes equations on the periodic box.
//!
//! The pipeline is base flow → phase cascade → assembly at a chosen ε, with
//! a direct pseudo-spectral solver for reference runs.

pub mod assemble;
pub mod baseflow;
pub mod cascade;
pub mod criteria;
pub mod direct;
pub mod error;
pub mod field;
pub mod operators;
pub mod snapshot;

pub use error::{Error, Result};
pub use field::{Grid, PhysProfile, ProfileField, SpectralField, C64, TWO_PI};
pub use operators::{PhaseFunction, PointwiseProjector, SingularCalculus};
