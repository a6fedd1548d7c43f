//! A small laboratory for reinforcement learning with policies that output
//! distribution parameters, treating those parameters as the actions of a
//! transformed decision process.
//!
//! The crate provides:
//! - deterministic feed-forward networks and Adam ([`nn`]),
//! - bandit and point-mass environments ([`envs`]),
//! - policy heads mapping network logits to distribution parameters
//!   ([`policy`]),
//! - the parameter-space view of an environment with exact value oracles
//!   ([`param_mdp`]),
//! - policy-gradient estimators and their variance comparison
//!   ([`estimators`]),
//! - twin critics with interpolated and standard temporal-difference updates
//!   ([`critic`]),
//! - complete training agents ([`agents`]),
//! - experiment orchestration, bootstrap statistics, and artifact output
//!   ([`harness`]).

pub mod agents;
pub mod critic;
pub mod envs;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod param_mdp;
pub mod policy;
pub mod quad;
pub mod nn;

pub use error::{Error, Result};
