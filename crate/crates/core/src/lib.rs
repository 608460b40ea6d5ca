//! Process-matrix estimation for small open quantum systems.
//!
//! The crate has two ways of producing a process matrix chi for a model
//! described by a Hamiltonian schedule and a set of Lindblad jump operators:
//!
//! * stochastic wave-function trajectories of the system entangled with an
//!   ancilla, averaged into chi ([`mcwf`] + [`tomography`]), and
//! * dense master-equation propagation used as an exact oracle ([`mastereq`]).
//!
//! [`model`] holds the shared model description and the structural matrices
//! that connect trajectory amplitudes to chi. [`rydberg`] builds a concrete
//! two-atom controlled-phase gate model. Everything is plain `ndarray` data;
//! no global state.

pub mod error;
pub mod linalg;
pub mod mastereq;
pub mod mcwf;
pub mod model;
pub mod ode;
pub mod rydberg;
pub mod tomography;

pub use error::Error;

/// Shorthand used throughout the crate.
pub type C64 = num_complex::Complex64;
pub type Result<T> = std::result::Result<T, Error>;
