//! Wiring helpers: build an engine for a simulated run, or rebuild one from a log.

use std::sync::Arc;

use thiserror::Error;

use crate::bundled;
use crate::graph::{Engine, EngineConfig, Event, EventBody, Limits, RunId, RunState, RunStatus, StepError};
use crate::provider::{ConfigError, Provider, ScriptedProvider};
use crate::sim::{Scenario, ScenarioError, SimBackend};
use crate::tools::{ExecutionBackend, SafetyPolicy};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// A simulator backend whose target has seen every command in `history`.
pub fn sim_backend(scenario: &Arc<Scenario>, max_output_bytes: usize, history: &[Event]) -> SimBackend {
    let mut backend = SimBackend::new(scenario.clone(), max_output_bytes);
    for event in history {
        if let EventBody::ToolOutput { tool, command, .. } = &event.body {
            backend.run_payload(*tool, command);
        }
    }
    backend
}

/// Number of provider calls already made, i.e. where a scripted provider resumes.
pub fn provider_calls_made(history: &[Event]) -> usize {
    history
        .iter()
        .filter(|e| matches!(e.body, EventBody::ProviderCall(_)))
        .count()
}

/// Builds an engine that continues a simulated run after `history`.
pub fn sim_engine(
    scenario: &Arc<Scenario>,
    provider: Arc<dyn Provider>,
    policy: SafetyPolicy,
    config: EngineConfig,
    history: &[Event],
) -> Engine {
    let backend: Box<dyn ExecutionBackend> = Box::new(sim_backend(scenario, policy.max_output_bytes, history));
    Engine::new(provider, backend, policy, config)
}

/// Fresh state for a run against a scenario.
pub fn sim_state(run_id: RunId, scenario: &Scenario, goal: Option<&str>, limits: Limits) -> RunState {
    let goal = goal.map_or_else(|| scenario.goal(), str::to_string);
    RunState::new(run_id, goal, scenario.target_description(), limits)
}

/// Runs a bundled (or file) scenario with a scripted fixture to completion or approval.
pub fn run_scripted(
    scenario: &str,
    fixture: &str,
    limits: Limits,
    policy: SafetyPolicy,
    auto_approve: Option<&str>,
) -> Result<(RunState, RunStatus), SessionError> {
    let scenario = bundled::load_scenario(scenario)?;
    let provider = Arc::new(ScriptedProvider::new(bundled::load_fixture(fixture)?));
    let config = EngineConfig {
        auto_approve: auto_approve.map(str::to_string),
        ..EngineConfig::default()
    };
    let mut engine = sim_engine(&scenario, provider, policy, config, &[]);
    let mut state = sim_state(RunId::from("run-scripted"), &scenario, None, limits);
    let status = engine.run_until_terminal(&mut state)?;
    Ok((state, status))
}
