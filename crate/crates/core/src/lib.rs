//! Home solar-battery dispatch under a two-tariff Australian retail plan.
//!
//! The crate bundles a half-hourly battery simulator, a from-scratch DDPG
//! agent, perfect-foresight and rule-based baselines, and the experiment
//! harness that trains, sweeps battery sizes and tunes hyperparameters.

pub mod agent;
pub mod config;
pub mod data;
pub mod env;
pub mod neural;
pub mod oracle;
pub mod plots;
pub mod seeds;
pub mod error;
pub mod experiment;

pub use error::{Error, Result};
