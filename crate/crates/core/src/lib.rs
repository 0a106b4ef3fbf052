//! Anytime-valid sequential tests for comparing two Bernoulli streams.
//!
//! Evidence is accumulated as a product of block e-values; rejecting once the
//! product reaches `1/alpha` keeps the type-I error below `alpha` under any
//! stopping rule.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod evalue;
pub mod model;
pub mod numeric;
pub mod observation;
pub mod process;
pub mod restricted;
pub mod service;
pub mod sim;

pub use error::{Error, Result};
pub use evalue::{simple_block_e, simple_block_log_e};
pub use model::{AlternativePoint, BetaPriorConfig, Block, BlockDesign, Group, StreamState};
pub use observation::Observation;
pub use process::{Decision, EvidenceProcess, ModelSpec};
pub use restricted::{Divergence, RestrictedPrior, RestrictionConfig};
