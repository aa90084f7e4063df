//! Toolkit for small-noise jump-diffusion generators: stochastic sampling,
//! deterministic limits, fluctuation Hamiltonians and least-action paths,
//! Hamilton-Jacobi quasi-potentials, and entropy-balance ledgers for both
//! the macroscopic dynamics and finite-state master equations.

pub mod determlimit;
pub mod error;
pub mod ldp;
pub mod master_cit;
pub mod model;
pub mod quasipotential;
pub mod simulate;
pub mod thermo;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{GeneratorSpec, ModelConfig, StateVector};
pub use trajectory::Trajectory;
