//! Simulation and pulse design for noise-robust control of NV-center spins.
//!
//! The crate covers the full pipeline: quasi-static noise models and their
//! characterization, composite single-qubit pulses, gradient-based design of
//! an electron–nuclear CNOT (with and without noise averaging), randomized
//! benchmarking, repeated-gate Hamiltonian fitting, and robust CNOT design for
//! two dipolar-coupled NV centers.

pub mod benchmark;
pub mod cli;
pub mod error;
pub mod fidelity;
pub mod grape;
pub mod hamiltonians;
pub mod linalg;
pub mod noise;
pub mod nvnv;
pub mod optim;
pub mod pulses;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, C64};
