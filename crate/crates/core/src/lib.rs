//! Quantum squeezing and photon-number correlations of NLSE soliton bound states.
//!
//! The classical field obeys `i U_z + U_tt / 2 + |U|^2 U = 0` and is integrated
//! with a symmetric split-step Fourier scheme ([`propagator`]). Quantum noise is
//! treated in the linearized (Bogoliubov) approximation around that trajectory
//! ([`fluctuations`]): measurement functionals at the output are carried back
//! to the input by the discrete adjoint flow and evaluated against vacuum
//! statistics there. [`measurements`] builds the homodyne squeezing ratio and
//! the spectral-slot correlation matrix on top of this, and a Monte-Carlo
//! forward estimator provides an independent check.

pub mod analytic;
pub mod cli;
pub mod error;
pub mod fluctuations;
pub mod grid;
pub mod measurements;
pub mod propagator;

pub use error::{Error, Result};
