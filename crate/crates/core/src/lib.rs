//! Post-stratified instrumental-variable estimators for the complier average
//! causal effect.
//!
//! The crate is `no_std` and needs only `alloc`. It covers observed and
//! potential-outcome data ([`data`]), point estimators ([`estimators`]),
//! standard errors ([`variance`]), finite-population bias and variance
//! oracles ([`theory`]) and a deterministic Monte Carlo engine
//! ([`simulation`]).

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod estimators;
pub mod simulation;
pub mod stats;
pub mod theory;
pub mod variance;

pub use data::{
    science_to_observed, summarize_stratum, ComplianceType, EstimateReport, Method, ObservedSample, ObservedUnit,
    ScienceTable, ScienceUnit, StratumSummary, UnitRecord,
};
pub use error::{Arm, Error, Result};
pub use estimators::EstimatorConfig;
