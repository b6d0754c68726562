//! Simulation of collective emission and annihilation in a dense, driven
//! ensemble of three-level positronium atoms.
//!
//! Three engines share one integrator and one observable layer:
//! [`lindblad`] (exact, small N), [`ladder`] (configuration counts, mid N)
//! and [`meanfield`] (factorized, any N).

pub mod config;
pub mod error;
pub mod ladder;
pub mod lindblad;
pub mod meanfield;
pub mod observables;
pub mod ode;
pub mod output;
pub mod params;
pub mod scenarios;

pub use error::{Error, Result};
