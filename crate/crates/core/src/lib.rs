//! Core of BreachSeek: a multi-agent orchestrator for authorized penetration tests.
//!
//! A run is a fixed graph of role nodes (supervisor, policy gate, pentester,
//! evaluator, recorder) driven by [`graph::Engine`]. Every state change is an
//! [`graph::Event`] appended to the run's transcript, so persisted logs replay to
//! the exact same state.

pub mod batch;
pub mod bundled;
pub mod fuzz;
pub mod graph;
pub mod provider;
pub mod roles;
pub mod session;
pub mod sim;
pub mod store;
pub mod tokens;
pub mod tools;
pub mod util;
