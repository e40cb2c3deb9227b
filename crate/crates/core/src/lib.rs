//! Joint phase identification and topology recovery for unbalanced
//! three-phase radial distribution feeders from voltage measurements.
//!
//! The crate is organised bottom-up:
//!
//! - [`network`], [`generate`], [`condition`]: the multi-phase radial
//!   network model, random feeders, and the line-impedance condition under
//!   which covariance-based phase matching is exact.
//! - [`admittance`]: incidence, admittance, pseudo-inverse and impedance
//!   matrices of the linearised model, with a path-sum and a numeric route
//!   to the reduced impedance matrix.
//! - [`simulate`]: injection sampling, voltages, noise and magnitude panels.
//! - [`stats`]: covariance tables, phase-matching scores and
//!   voltage-difference variances.
//! - [`recover`]: the greedy joint recovery and its restricted variants.
//! - [`harness`]: error metrics, repeated trials and parameter sweeps.

pub mod admittance;
pub mod condition;
pub mod error;
pub mod generate;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod ordering;
pub mod phase;
pub mod recover;
pub mod simulate;
pub mod stats;

pub use condition::{check_line_condition, ConditionReport};
pub use error::{Error, Result};
pub use generate::{random_preset, random_radial, FeederPreset, ImpedanceParams};
pub use network::{toynet, validate_network, LineModel, RadialNetwork, ValidationReport};
pub use ordering::PhaseOrdering;
pub use phase::{Phase, PhaseSet};
