//! Numerical laboratory for first-order, homogeneous, constant-coefficient
//! differential operators `Au = sum_j A_j d_j u`: symbols and ellipticity,
//! polynomial null-spaces, L2 projections on balls, Poincare-Sobolev ratios,
//! Fourier-multiplier reconstruction, and L^p differentiability experiments.

pub mod ellipticity;
pub mod error;
pub mod operator;
pub mod rng;

pub use error::{Error, Result};
pub use operator::{Builtin, Operator, OperatorSpec};
pub mod nullspace;
pub mod poly;
pub mod grid;
pub mod ballcalc;
pub mod measure;
pub mod fieldgen;
pub mod inequality;
pub mod reconstruct;
pub mod diffexp;
