//! Deterministic simulated targets used for tests, demos and the acceptance suite.

mod backend;
mod scenario;
mod target;

pub use backend::{split_command_list, Connector, SimBackend, SIM_COMMAND_MS};
pub use scenario::{ChainStep, ChainStepSpec, Privilege, Scenario, ScenarioError, ScenarioFile, Service};
pub use target::{SimOutput, TargetState};

