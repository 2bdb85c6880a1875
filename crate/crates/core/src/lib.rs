//! Forward models and parameter inference for the spin and optical physics of
//! SiC divacancy defects.
//!
//! The crate is organized around the experiments it reproduces:
//!
//! * [`linalg`] — small dense complex linear algebra (spin operators, Hermitian
//!   eigensystems, exact propagation of linear rate systems).
//! * [`ground`] — the S = 1 ground-state Hamiltonian with Zeeman and hyperfine
//!   terms; ODMR line prediction, hyperfine-tensor fitting, and coherence
//!   envelopes (Rabi, Ramsey, Hahn echo with ESEEM).
//! * [`excited`] — the six-level ³E excited-state fine structure; PLE line
//!   prediction versus transverse strain, spin-mixing probabilities, and
//!   strain fan diagrams.
//! * [`optical`] — the five-level optical-cycle rate-equation model: PL
//!   transients, biexponential lifetimes, g²(τ), readout contrast, and
//!   spin-flip saturation.
//! * [`inference`] — weighted nonlinear least squares, affine-invariant
//!   ensemble MCMC with credible intervals, the PLE ensemble fit, and the
//!   linewidth-temperature fit.
//! * [`tables`] — CSV measurement tables with unit-annotated headers.
//!
//! Unit conventions: energies in GHz, hyperfine couplings in MHz, rates in
//! 1/ns, times in ns (coherence delays in µs), magnetic fields in G, optical
//! powers in mW. Conversions to and from other units happen only at the I/O
//! boundary in [`tables`].

pub mod error;
pub mod excited;
pub mod ground;
pub mod inference;
pub mod linalg;
pub mod optical;
pub mod tables;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
