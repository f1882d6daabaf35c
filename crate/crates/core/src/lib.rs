//! Desk-scale semidefinite programming with simplicity certification.
//!
//! The crate solves standard-form SDPs with a first-order splitting method,
//! certifies strict complementarity and primal/dual uniqueness of the
//! computed pair, generates the structured instance families (MaxCut-type,
//! Z₂ synchronization, SBM, matrix completion) together with their
//! closed-form dual certificates, and runs a Burer–Monteiro factorized
//! solver with second-order stationarity checks.

pub mod bm;
pub mod certifier;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod rng;
pub mod serde_util;
pub mod solver;

pub use error::{Result, SdpError};
pub use linalg::{EigDecomp, SymMatrix};
pub use model::{Residuals, SolveStatus, SolverSolution, SparseSym, StandardFormSdp};
