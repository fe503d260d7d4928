//! Round-synchronous simulator and numerical verification suite for
//! adaptive-weighting push-sum optimization over time-varying directed
//! graphs.
//!
//! The crate is organized around six pieces:
//!
//! * [`topology`] — deterministic time-varying graph generators and
//!   B-window connectivity validation;
//! * [`weighting`] — column-stochastic mixing matrices: the uniform
//!   out-degree rule and the adaptive distance-penalty rule;
//! * [`protocol`] — the push-sum state machine (parameter, normalizer,
//!   corrected parameter, adjacency buffers) plus a matrix-form oracle;
//! * [`problems`] — synthetic quadratic and logistic losses with
//!   heterogeneity and noise knobs;
//! * [`algorithms`] — the SGD/momentum optimizers driving the protocol,
//!   a gradient-tracking baseline, and the experiment loop;
//! * [`analysis`] — brute-force verification of the consensus decay,
//!   row-sum, and trajectory-bound guarantees.
//!
//! Everything is deterministic given the run seed: randomness is derived
//! from counter-based keys, never from shared mutable RNG state.

pub mod algorithms;
pub mod analysis;
pub mod config;
pub mod exec;
pub mod numeric;
pub mod problems;
pub mod protocol;
pub mod rng;
pub mod topology;
pub mod weighting;
