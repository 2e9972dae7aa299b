//! Semiclassical coupled-channel scattering in a diabatic molecular basis.
//!
//! The crate propagates channel amplitudes along classical internuclear
//! trajectories, turns opacity functions into integral cross sections, and
//! maps the same collision Hamiltonian onto an emulated single-excitation-
//! subspace (SES) device to compare probabilities and simulated run time.
//!
//! Everything in the numeric core works in Hartree atomic units
//! (ħ = mₑ = e = a₀ = 1): energies in hartree, lengths in bohr, speeds and
//! times in a.u. Channel indices are 0-based throughout the API; the CLI and
//! file headers use the 1-based labels conventional in the collision
//! literature.

pub mod bench;
pub mod constants;
pub mod error;
pub mod linalg;
pub mod potmodel;
pub mod propagators;
pub mod report;
pub mod scattering;
pub mod sesmap;
pub mod special;
pub mod spline;
pub mod trajectory;

pub use error::{Error, Result};
