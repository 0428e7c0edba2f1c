//! Numerical laboratory for Dirac fields outside an extreme Kerr-de Sitter black hole.

pub mod angular;
pub mod cli;
pub mod error;
pub mod field2d;
pub mod geometry;
pub mod ode;
pub mod potentials;
pub mod quad;
pub mod radial1d;
pub mod scattering;
pub mod verify;

pub use error::{KdsError, LineError, Result};
