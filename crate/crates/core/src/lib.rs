//! Forward and inverse modelling of excitonic near-field spectra.
//!
//! The forward side builds dipole-coupled aggregates, diagonalizes their
//! exciton Hamiltonians and evaluates tip-scan absorption spectra (ideal and
//! with a polarizable tip plus line broadening). The inverse side trains a
//! convolutional regression network that maps a spectrum back to the
//! eigenstate coefficients, with black-box optimizers as baselines.

pub mod baseline;
pub mod dataset;
pub mod eigen;
pub mod error;
pub mod geometry;
pub mod hamiltonian;
pub mod linalg;
pub mod localfield;
pub mod nearfield;
pub mod neuralnet;
pub mod rng;
pub mod vec3;

pub use eigen::{canonicalize_sign, diagonalize, EigenSystem};
pub use error::{Error, Result};
pub use geometry::{build_geometry, AggregateGeometry, GeometryConfig};
pub use hamiltonian::{build_hamiltonian, coupling, sample_disorder, DisorderSpec, Hamiltonian};
