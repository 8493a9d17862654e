//! Numerical laboratory for fractional Schrödinger inverse problems on
//! discrete closed manifolds.

pub mod entangle;
pub mod error;
pub mod forward;
pub mod heatrep;
pub mod mesh;
pub mod recover;
pub mod spectral;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
