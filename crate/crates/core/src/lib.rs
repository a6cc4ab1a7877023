//! Detection of phenomenological bifurcations in stochastic oscillators from
//! a single realization.
//!
//! The pipeline simulates an oscillator, estimates its stationary density on a
//! grid, computes superlevel cubical persistence, manufactures an ensemble of
//! persistence diagrams from the single observed one, and reports how often
//! each number of significant features appears across a parameter sweep.

pub mod cubical;
pub mod density;
pub mod pipeline;
pub mod rng;
pub mod sde;
pub mod replicate;
pub mod significance;
