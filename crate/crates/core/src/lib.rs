//! Offline reinforcement learning workbench for downlink link adaptation.
//!
//! The crate bundles a toy HARQ link-adaptation environment with an exact
//! dynamic-programming oracle, logged-data tooling, a small reverse-mode
//! autodiff library, value-based offline agents, a decision transformer
//! with delayed-feedback attention masking, and a rule-based OLLA
//! controller. [`harness`] wires them into reproducible experiments.

pub mod agents;
pub mod dataset;
pub mod dt;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod olla;
pub mod oracle;
pub mod policy;

pub use env::{Action, EnvConfig, LaEnv, Observation, StepOutcome};
pub use error::{Error, Result};
pub use policy::Policy;
