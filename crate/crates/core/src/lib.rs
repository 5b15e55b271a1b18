//! Undecided-state dynamics (USD) on the complete graph with self-loops.
//!
//! Two communication models are covered: the synchronous gossip model, where
//! every vertex pulls one uniformly random vertex per round, and the
//! population-protocol model, where one ordered pair interacts per step and
//! only the initiator updates.
//!
//! The crate is organised as
//!
//! * [`dynamics`]: the counts-level Markov chains and trial runner,
//! * [`quantities`]: scalar observables of a state, opinion classification
//!   and first-hitting-time tracking,
//! * [`analytic`]: closed-form one-step moments and bounds,
//! * [`oracle`]: exhaustive / exact ground truth used to check the other
//!   modules,
//! * [`experiments`]: initial configurations, batch runs and experiment
//!   suites,
//! * [`cli`]: the `usd` command-line front end.

pub mod analytic;
pub mod cli;
pub mod dynamics;
mod error;
pub mod experiments;
pub mod numeric;
pub mod oracle;
pub mod quantities;
mod sample;

pub use error::{Error, Result};
