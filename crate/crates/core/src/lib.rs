//! Grouping of single-line contingencies of a linearized power network and
//! synthesis of one bounded static state-feedback controller per group.
//!
//! The flow is: build one plant per non-disconnecting line outage
//! ([`power_model`]), measure pairwise distances between the outage plants in
//! feedback with a nominal controller ([`metrics`]), partition them
//! ([`clustering`]), design one controller per group ([`synthesis`]), and
//! score the grouping against per-outage and all-outage baselines
//! ([`evaluation`]).

pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod lti;
pub mod metrics;
pub mod power_model;
pub mod synthesis;

pub use error::{Error, Result};
