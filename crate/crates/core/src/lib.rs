//! Monitored Sachdev-Ye-Kitaev dynamics on a qubit register.
//!
//! The crate covers the Jordan-Wigner mapping of Majorana operators, dense
//! SYK realizations with exact spectral propagation, stochastic measurement
//! trajectories, entanglement and purity observables, ensemble statistics,
//! parameter sweeps and a Haar-random decoupling benchmark.

pub mod analysis;
pub mod decoupling;
pub mod error;
pub mod linalg;
pub mod observables;
pub mod par;
pub mod pauli;
pub mod rng;
pub mod state;
pub mod sweep;
pub mod syk;
pub mod trajectory;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
