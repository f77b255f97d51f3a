//! Quantum-classical hybrid dynamics of a two-level atom with recoil in a
//! single-mode standing-wave cavity.
//!
//! The atom's internal state and the quantized field are carried as a ladder of
//! real Bloch triples `(u_n, v_n, z_n)`, one per photon-number manifold; the
//! centre-of-mass motion is a classical pair `(x, p)`. On top of the equations of
//! motion the crate provides an adaptive DOP853 integrator with event location,
//! maximal Lyapunov exponents, Poincaré sections and exit-time scattering scans.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration and
//! thread pools live in the companion `cavity-chaos` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod chaos;
pub mod dynamics;
mod error;
pub mod integrator;
pub(crate) mod math;
pub mod model;
pub mod scattering;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{AtomPreparation, BlochTriple, FieldPreparation, HybridState, ModelParams, Scenario, TAIL_TOLERANCE};
