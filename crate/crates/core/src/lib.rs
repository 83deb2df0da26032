//! Generalized McKean–Vlasov dynamics with memory: particle simulation,
//! linear-Gaussian analytics, stationary states, thermodynamic functionals
//! and the white-noise limit.

pub mod cli;
pub mod config;
pub mod error;
pub mod limits;
pub mod linalg;
pub mod model;
pub mod quadratic;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod stationary;
pub mod thermo;

pub use error::{Error, Result};
pub use model::{
    eval_potential, validate, DynamicsKind, InteractionSpec, MemorySpec, ModelSpec, PotentialKind,
    ValidatedModel,
};
pub use scalar::Real;

/// Double-precision matrix type used throughout the analytics.
pub type Matrix = linalg::SquareMatrix<f64>;
/// Single-precision variant.
pub type Matrix32 = linalg::SquareMatrix<f32>;
pub type PotentialSpec = model::PotentialSpec<f64>;
pub type Interaction = model::InteractionSpec<f64>;
