//! Numerical laboratory for the semiclassical second-microlocal calculus in
//! its model case: the zero section of T*T^n and its lattice translates.
//!
//! The crate quantizes bi-graded symbols on the blown-up phase space,
//! measures calculus identities by h-sweep order regression, and estimates
//! second wavefront sets of quasimode families of completely integrable
//! Hamiltonians on the torus.

pub mod calculus;
pub mod config;
pub mod error;
pub mod grid;
pub mod integrable;
pub mod jet;
pub mod microlocal;
pub mod quantize;
pub mod report;
pub mod runner;
pub mod symbols;

pub use error::{Error, Result};
