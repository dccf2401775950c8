//! Extrapolation of timed demolition-measurement statistics on
//! finite-dimensional quantum systems.
//!
//! The library simulates timelines `P(a|x,t) = tr(e^{-iHt} rho e^{iHt} M_{a|x})`
//! generated by explicit realizations (state, Hamiltonian, POVM family), and
//! computes rigorous outer bounds `[mu-, mu+]` on linear functionals of the
//! datapoint at an extrapolation time `tau`, subject to hard-support,
//! soft-support, or average-energy constraints on the generating model.
//!
//! Module map:
//! - [`quantum`]: complex Hermitian linear algebra, realizations, simulation,
//!   purification, time-jitter averaging, and the "fits" predicate.
//! - [`generators`]: named dataset/realization families with closed-form oracles.
//! - [`solver`]: standard-form conic programs, the Hermitian-to-real embedding,
//!   and the pluggable solve contract (Clarabel adapter included).
//! - [`cones`]: decay-matrix cones for the high-energy Gram block (equal-diagonal
//!   PSD, Toeplitz-PSD, torus moment hierarchy), rounding, atomic decomposition.
//! - [`relaxations`]: the semidefinite relaxation models, realization
//!   extraction, and analytic gap bounds.
//! - [`extrapolation`]: interval solves, Knightian/full-certainty classification,
//!   and self-testing diagnostics.

pub mod cones;
pub mod error;
pub mod extrapolation;
pub mod generators;
pub mod quantum;
pub mod relaxations;
pub mod solver;

pub use error::{Error, Result};
