//! Ground truth for the simulator and the closed-form moments.
//!
//! * [`gossip_onestep_exhaustive`] enumerates all `n^n` joint pull choices of
//!   one gossip round (vertex level, `n ≤ 8`).
//! * [`pp_onestep_exact`] enumerates ordered (initiator, responder) class
//!   pairs of one interaction.
//! * [`moments_of`] turns a one-step distribution into exact moments.
//! * [`exact_absorption`] solves the absorbing chain on small instances.
//! * [`mc_onestep_moments`] estimates one-step moments by sampling the
//!   simulator.

mod absorption;
mod enumerate;
mod field;
mod moments;
mod montecarlo;

pub use absorption::{exact_absorption, AbsorptionSolution, Precision, SolveMethod, DEFAULT_STATE_CAP};
pub use enumerate::{
    gossip_onestep_exhaustive, gossip_transition_row, pp_onestep_exact, pp_transition_row, OneStepDistribution,
    Provenance, MAX_EXHAUSTIVE_N,
};
pub use field::Field;
pub use moments::{moments_of, ExactMoments};
pub use montecarlo::{mc_onestep_moments, Estimate, McMoments};
