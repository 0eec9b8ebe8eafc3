//! Deterministic discrete-event simulator and benchmark harness for the
//! Aura and Clique proof-of-authority protocols and a simplified PBFT.
//!
//! A run is fully determined by its [`scenario::Scenario`] and seed. The
//! engine writes an NDJSON [`analysis::Trace`]; checkers, CAP
//! classification and metrics are computed from the trace alone.

pub mod adversary;
pub mod analysis;
pub mod aura;
pub mod chain;
pub mod clique;
pub mod codec;
pub mod crypto;
pub mod engine;
pub mod ledger;
pub mod pbft;
pub mod scenario;
pub mod sim;
pub mod simnet;
pub mod sweep;
pub mod types;

pub use scenario::{Protocol, Scenario, ScenarioError};
pub use sim::{run, simulate, RunOutcome};
