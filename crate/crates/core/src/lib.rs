//! Limit cycles and isochrons of planar ODEs under small state-dependent
//! delay perturbations, computed with the parameterization method.
//!
//! The unknowns are the perturbed frequency `omega`, the Floquet exponent
//! `lambda` and an embedding `W(theta, s)` conjugating the flow to
//! `(theta + omega t, s e^{lambda t})`. `W` is split into a Fourier–Taylor jet
//! of order `N` and a tail of order at least `N` in `s`.

pub mod config;
pub mod error;
pub mod expr;
pub mod jet;
pub mod model;
pub mod num;
pub mod periodic;
pub mod solution;
pub mod solver;
pub mod tail;
pub mod validate;

pub use error::{Error, Result};
