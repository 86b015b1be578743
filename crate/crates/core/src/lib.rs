//! Penalized function-on-function linear regression with a tensor-product
//! cubic spline coefficient surface.
//!
//! The pipeline is: sample curves on a quadrature rule ([`quadrature`]), build
//! the representer design ([`design`]), solve the penalized least-squares
//! system and pick `λ` by modified GCV ([`solver`]), and wrap the result as a
//! fitted model ([`model`]). [`simulate`] reproduces the simulation studies.

pub mod design;
pub mod error;
pub mod kernels;
pub mod model;
pub mod quadrature;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
