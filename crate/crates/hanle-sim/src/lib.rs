//! Steady-state simulation of nonlinear magneto-optical resonances (EIA/EIT)
//! on a closed atomic transition F_g -> F_e driven by an elliptically
//! polarized traveling wave in the Hanle configuration (static magnetic field
//! along the wave vector).
//!
//! The crate solves the stationary generalized optical Bloch equations for
//! the ground, excited and optical-coherence blocks of the density matrix,
//! averages the per-atom absorption over the Maxwellian distribution of
//! Doppler shifts, and extracts the amplitude and width of the narrow
//! central structure of the absorption-vs-field resonance curve.
//!
//! All rates are expressed in units of the optical-coherence relaxation rate
//! `gamma_eg = 1`; magnetic field enters through the ground-state Zeeman
//! splitting rate `omega_g` (see [`bloch::zeeman_from_field`] to convert
//! from gauss).

pub mod angular;
pub mod bloch;
pub mod cli;
pub mod config;
pub mod doppler;
mod error;
pub mod resonance;

pub use error::{Error, Result};
