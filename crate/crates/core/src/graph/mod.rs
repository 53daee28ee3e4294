//! Graph runtime: run state, routing, context compression and the step loop.

mod context;
mod engine;
mod event;
mod route;
mod state;

pub use context::{compress_context, exchanges, render_action, supervisor_messages, Exchange};
pub use engine::{Engine, EngineConfig, EventSink, StepError};
pub use event::{canonical_hash, Event, EventBody, EventKind, NodeId, ProviderCall};
pub use route::{route, InvalidOutcomeType, NodeOutcome};
pub use state::{
    InvalidLimits, Limits, ReplayError, RunId, RunState, RunStatus, DEFAULT_CONTEXT_WINDOW,
    DEFAULT_KEEP_VERBATIM_TAIL, DEFAULT_MAX_ITERATIONS, DEFAULT_TOKEN_BUDGET,
};
