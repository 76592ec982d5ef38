//! Numerical laboratory for symmetric jump-diffusions in one-dimensional
//! random media: medium sampling, construction of jump coefficients from
//! prescribed rates, Euler simulation, scaling-limit diagnostics and
//! effective-diffusivity solvers.

pub mod corrector;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod jump_kernel;
pub mod quad;
pub mod roots;
pub mod scaling;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
