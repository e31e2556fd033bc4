//! Simulation of noisy continuous-wave light reflected off a Kerr non-linear
//! cavity: rigorous time-domain round-trip propagation, discrete-Fourier
//! sideband extraction, linearized quadrature transfer matrices, squeezing
//! spectra, Gaussian Wigner functions and operating-point optimization.

pub mod cavity;
pub mod engine;
pub mod error;
pub mod io;
pub mod phasespace;
pub mod pipeline;
pub mod transfer;

pub use error::{Error, Result};
