//! Action-angle variables, fluctuation-minimizing iteration and KAM
//! invariants from the left Jordan chains of a truncated square matrix.
//!
//! The pipeline, bottom up:
//!
//! * [`polyalg`] truncated complex polynomials in the resonance variables,
//! * [`dynamics`] model ingestion plus the forward-integration oracle,
//! * [`sqmatrix`] the square matrix `Ż = MZ` and its gauged Jordan chains,
//! * [`torusmap`] action maps, their Newton inverse and torus Fourier tables,
//! * [`combiner`] bootstrap and fluctuation-minimizing linear combinations,
//! * [`perturbation`] the first-order phase perturbation step,
//! * [`iteration`] the full solve, amplitude continuation and boundary scans,
//! * [`kaminvariant`] the exponential (Laurent) KAM invariants.

pub mod combiner;
pub mod dynamics;
pub mod error;
pub mod iteration;
pub mod kaminvariant;
pub mod perturbation;
pub mod polyalg;
pub mod sqmatrix;
pub mod torusmap;

pub use error::{Error, Result};
pub use num_complex::Complex64;
