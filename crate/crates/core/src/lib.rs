//! Plug-and-play output consensus for networks of input feedforward passive
//! (IFP) systems coupled through sector-bounded diffusive links.
//!
//! - [`graph`]: undirected graphs, incidence matrices and plug plans.
//! - [`passivity`]: LTI realizations, IFP index estimation and coupling laws.
//! - [`certificates`]: local edge conditions and plug certificates.
//! - [`sim`]: fixed-step simulation with seeded noise and plug events.
//! - [`metrics`]: truncated norms, disagreement and empirical consensus gains.
//! - [`scenario`]: the JSON scenario format.

pub mod certificates;
pub mod graph;
pub mod metrics;
pub mod passivity;
pub mod scenario;
pub mod sim;
