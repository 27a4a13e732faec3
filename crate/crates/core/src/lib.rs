//! Numerical laboratory for polaron fiber Hamiltonians `H = P^2 + Φ(v) + N`
//! on a truncated bosonic Fock space.
//!
//! The crate discretizes the model ([`grid`], [`fock`]), solves for its low
//! spectrum ([`spectral`]), assembles the two-step Schur reduction onto the
//! vacuum and one-boson sectors together with the derived Birman–Schwinger
//! operator ([`reduction`]), and checks the operator identities behind that
//! reduction on the truncated model ([`identities`]). [`scan`] sweeps the
//! coupling constant.

pub mod error;
mod float_serde;
pub mod fock;
pub mod grid;
pub mod identities;
pub mod instance;
mod par;
pub mod reduction;
pub mod scan;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
