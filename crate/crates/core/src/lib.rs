//! Quantum phase estimation of frequency response functions for networks of
//! coupled harmonic oscillators, emulated exactly on a statevector simulator
//! and checked against a classical eigensolver.

pub mod blockenc;
pub mod classical;
pub mod cli;
pub mod estimator;
pub mod gluedtrees;
pub mod error;
pub mod network;
pub mod pipeline;
pub mod qpe;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
