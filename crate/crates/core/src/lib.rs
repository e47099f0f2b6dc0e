//! Multi-parameter spectrum cognition toolkit.
//!
//! The pipeline runs generate → feature → cognize → predict:
//!
//! * [`signal_model`] synthesizes licensed-user frames and occupancy chains.
//! * [`features`] turns frames into per-slot energy and cumulant vectors.
//! * [`detect`] identifies power levels when the hypotheses are known.
//! * [`learn_power`] discovers power states by clustering and trains a
//!   margin classifier when they are not.
//! * [`learn_mod`] discovers joint modulation/power patterns with a
//!   Dirichlet-process Gaussian mixture.
//! * [`predict_occ`] learns per-channel occupancy dynamics and ranks channels
//!   for sensing.
//! * [`harness`] wires the above into reproducible experiments and the CLI.

pub mod detect;
pub mod error;
pub mod features;
pub mod harness;
pub mod learn_mod;
pub mod learn_power;
pub mod predict_occ;
pub mod signal_model;

pub use error::{CognitionError, Result};
