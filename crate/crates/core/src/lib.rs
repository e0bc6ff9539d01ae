//! Pfaffian point processes on the line: sine-kernel correlation functions,
//! discretized kernel operators, cumulant traces of linear statistics,
//! finite-rank commutator checks and beta-ensemble Monte Carlo.

pub mod cumulants;
pub mod discretize;
pub mod ensembles;
pub mod error;
pub mod frcp;
pub mod kernels;
pub mod quadrature;
pub mod skewlin;
pub mod special;

pub use error::{Error, Result};
