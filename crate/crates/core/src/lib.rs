//! Stochastic energy minimisation for semilinear elliptic problems with
//! random coefficients, over a finite element ⊗ polynomial chaos subspace.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod estimators;
pub mod fem1d;
pub mod linalg;
pub mod pc_basis;
pub mod problem;
pub mod quadrature;
pub mod random_field;
pub mod sgd;

pub use error::{Error, Result};
