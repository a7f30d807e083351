//! Damped vacuum Rabi oscillations of a two-level atom in a lossy cavity.
//!
//! Four master-equation models share one set of types: the zero- and
//! finite-temperature phenomenological models, the dressed-state model and
//! the open-cavity model with intra-manifold jumps. Closed forms, numerical
//! propagation, time-uncertainty convolution, separability analysis and
//! least-squares fitting are built on top of them.

pub mod cli;
pub mod closed_form;
pub mod davies;
pub mod dephase;
pub mod entangle;
pub mod error;
pub mod evolve;
pub mod fitting;
pub mod linalg;
pub mod models;
pub mod presets;
mod quad;
pub mod verify;

pub use error::{Error, Result};
