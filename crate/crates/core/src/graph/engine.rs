use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;

use crate::provider::Provider;
use crate::roles::{
    evaluate, generate_report, record_step, supervisor_plan, ActionId, ActionKind, EvalVerdict, Meter,
    PlannedAction, RoleError, VerdictStatus,
};
use crate::tools::{
    check_policy, resolve_approval, ApprovalVerdict, Decision, ExecutionBackend, SafetyPolicy, ToolInvocation,
    ToolKind, ToolResult,
};

use super::{EventBody, NodeId, RunState, RunStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("run is {0}, not running")]
    NotRunning(RunStatus),
    #[error("run has already terminated")]
    AtTerminal,
    #[error("action {action_id} awaits human approval")]
    ApprovalPending { action_id: ActionId },
    #[error("node {node} failed: {reason}")]
    NodeFailure { node: NodeId, reason: String },
    #[error("failed to persist events: {0}")]
    Persist(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Receives every batch of new events after each step, e.g. to persist them.
pub trait EventSink: Send {
    fn emit(&mut self, events: &[super::Event]) -> Result<(), String>;
}

impl<F> EventSink for F
where
    F: FnMut(&[super::Event]) -> Result<(), String> + Send,
{
    fn emit(&mut self, events: &[super::Event]) -> Result<(), String> {
        self(events)
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub working_dir: PathBuf,
    pub interpreter: String,
    /// Approve gated actions immediately in the name of this actor.
    pub auto_approve: Option<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            working_dir: std::env::temp_dir(),
            interpreter: "python3".into(),
            auto_approve: None,
        }
    }
}

/// Drives a [`RunState`] through the graph one node at a time.
pub struct Engine {
    provider: Arc<dyn Provider>,
    backend: Box<dyn ExecutionBackend>,
    policy: SafetyPolicy,
    config: EngineConfig,
    sink: Option<Box<dyn EventSink>>,
}

impl Engine {
    pub fn new(
        provider: Arc<dyn Provider>,
        backend: Box<dyn ExecutionBackend>,
        policy: SafetyPolicy,
        config: EngineConfig,
    ) -> Self {
        Self {
            provider,
            backend,
            policy,
            config,
            sink: None,
        }
    }

    pub fn with_sink(mut self, sink: impl EventSink + 'static) -> Self {
        self.sink = Some(Box::new(sink));
        self
    }

    pub fn policy(&self) -> &SafetyPolicy {
        &self.policy
    }

    pub fn backend(&self) -> &dyn ExecutionBackend {
        self.backend.as_ref()
    }

    fn meter(&self, state: &RunState) -> Meter<'_> {
        Meter::budgeted(self.provider.as_ref(), state.token_usage, state.token_budget())
    }

    /// Executes the current node once. Returns the node that ran.
    pub fn step(&mut self, state: &mut RunState) -> Result<NodeId, StepError> {
        let before = state.transcript.len();
        let result = self.step_inner(state);
        if state.transcript.len() > before {
            if let Some(sink) = self.sink.as_mut() {
                sink.emit(&state.transcript[before..]).map_err(StepError::Persist)?;
            }
        }
        result
    }

    /// Steps until the run terminates or suspends for approval, and returns its status.
    pub fn run_until_terminal(&mut self, state: &mut RunState) -> Result<RunStatus, StepError> {
        loop {
            match self.step(state) {
                Ok(_) if state.status.is_terminal() => return Ok(state.status),
                Ok(_) => {}
                Err(StepError::ApprovalPending { .. }) => return Ok(state.status),
                Err(StepError::NodeFailure { node, reason }) => {
                    tracing::warn!(%node, %reason, "node failure ended the run");
                    return Ok(state.status);
                }
                Err(StepError::AtTerminal) => return Ok(state.status),
                Err(e) => return Err(e),
            }
        }
    }

    fn step_inner(&mut self, state: &mut RunState) -> Result<NodeId, StepError> {
        if state.current_node == NodeId::Terminal {
            return Err(StepError::AtTerminal);
        }
        if state.status != RunStatus::Running {
            return Err(StepError::NotRunning(state.status));
        }
        let node = state.current_node;
        match node {
            NodeId::Supervisor => self.supervise(state)?,
            NodeId::PolicyGate => self.gate(state)?,
            NodeId::Pentester => self.execute(state)?,
            NodeId::Evaluator => self.evaluate(state)?,
            NodeId::RecorderUpdate => self.record(state)?,
            NodeId::RecorderFinal => self.conclude(state)?,
            NodeId::Terminal => unreachable!("checked above"),
        }
        super::compress_context(state);
        Ok(node)
    }

    fn push(state: &mut RunState, node: NodeId, body: EventBody) -> Result<(), StepError> {
        state
            .record(node, body)
            .map(|_| ())
            .map_err(|e| StepError::Internal(e.to_string()))
    }

    fn push_calls(state: &mut RunState, node: NodeId, meter: Meter<'_>) -> Result<(), StepError> {
        for call in meter.into_calls() {
            Self::push(state, node, EventBody::ProviderCall(call))?;
        }
        Ok(())
    }

    /// Handles a role error: budget exhaustion aborts, anything else fails the run.
    fn role_failure(&self, state: &mut RunState, node: NodeId, err: RoleError) -> Result<(), StepError> {
        match err {
            RoleError::BudgetExhausted { .. } => {
                self.finish(state, RunStatus::AbortedBudget, &err.to_string())?;
                Ok(())
            }
            other => {
                let reason = other.to_string();
                self.finish(state, RunStatus::Failed, &format!("{node} failed: {reason}"))?;
                Err(StepError::NodeFailure { node, reason })
            }
        }
    }

    fn supervise(&mut self, state: &mut RunState) -> Result<(), StepError> {
        let mut meter = self.meter(state);
        let planned = supervisor_plan(state, &mut meter);
        match planned {
            Ok(action) => {
                Self::push(state, NodeId::Supervisor, EventBody::Plan { action })?;
                Self::push_calls(state, NodeId::Supervisor, meter)
            }
            Err(err) => {
                Self::push_calls(state, NodeId::Supervisor, meter)?;
                self.role_failure(state, NodeId::Supervisor, err)
            }
        }
    }

    fn last_action(state: &RunState) -> Result<PlannedAction, StepError> {
        state
            .last_action
            .clone()
            .ok_or_else(|| StepError::Internal("no planned action".into()))
    }

    fn gate(&mut self, state: &mut RunState) -> Result<(), StepError> {
        let action = Self::last_action(state)?;
        let decision = check_policy(&action, &self.policy);
        let needs_approval = decision.decision == Decision::RequireApproval;
        Self::push(
            state,
            NodeId::PolicyGate,
            EventBody::GateDecision {
                action_id: action.action_id.clone(),
                command: action.command.clone(),
                decision,
                actor: None,
            },
        )?;
        if !needs_approval {
            return Ok(());
        }
        Self::push(
            state,
            NodeId::PolicyGate,
            EventBody::StatusChange {
                from: RunStatus::Running,
                to: RunStatus::AwaitingApproval,
                reason: format!("action {} requires approval", action.action_id),
            },
        )?;
        if let Some(actor) = self.config.auto_approve.clone() {
            resolve_approval(state, &action.action_id, ApprovalVerdict::Approve, &actor)
                .map_err(|e| StepError::Internal(e.to_string()))?;
            return Ok(());
        }
        Err(StepError::ApprovalPending {
            action_id: action.action_id,
        })
    }

    fn execute(&mut self, state: &mut RunState) -> Result<(), StepError> {
        let action = Self::last_action(state)?;
        let tool = match action.kind {
            ActionKind::Shell => ToolKind::Shell,
            ActionKind::Script => ToolKind::Script,
            ActionKind::Conclude => return Err(StepError::Internal("conclude reached the pentester".into())),
        };
        let command = action.command.clone().unwrap_or_default();
        let invocation = ToolInvocation {
            tool,
            payload: command.clone(),
            interpreter: self.config.interpreter.clone(),
            timeout_seconds: self.policy.timeout_seconds,
            working_dir: self.config.working_dir.clone(),
            env_overrides: Default::default(),
        };
        let result = self
            .backend
            .execute(&invocation)
            .unwrap_or_else(|e| ToolResult::failed(&e));
        Self::push(
            state,
            NodeId::Pentester,
            EventBody::ToolOutput {
                action_id: action.action_id,
                tool,
                command,
                result,
            },
        )
    }

    fn evaluate(&mut self, state: &mut RunState) -> Result<(), StepError> {
        let action = Self::last_action(state)?;
        let result = state
            .last_result
            .clone()
            .ok_or_else(|| StepError::Internal("no tool result to evaluate".into()))?;
        let mut meter = self.meter(state);
        match evaluate(&action, &result, &state.goal, &mut meter) {
            Ok(verdict) => {
                Self::push(
                    state,
                    NodeId::Evaluator,
                    EventBody::Verdict {
                        action_id: action.action_id,
                        verdict,
                    },
                )?;
                Self::push_calls(state, NodeId::Evaluator, meter)
            }
            Err(err) => {
                // keep the plan/output/verdict spine intact
                let verdict = EvalVerdict {
                    status: VerdictStatus::Failure,
                    critique: format!("evaluation not performed: {err}"),
                    suggestion: None,
                };
                Self::push(
                    state,
                    NodeId::Evaluator,
                    EventBody::Verdict {
                        action_id: action.action_id,
                        verdict,
                    },
                )?;
                Self::push_calls(state, NodeId::Evaluator, meter)?;
                self.role_failure(state, NodeId::Evaluator, err)
            }
        }
    }

    fn record(&mut self, state: &mut RunState) -> Result<(), StepError> {
        let mut meter = self.meter(state);
        match record_step(&state.summary, state.unsummarized(), &mut meter) {
            Ok(update) => {
                Self::push(state, NodeId::RecorderUpdate, EventBody::SummaryUpdate { update })?;
                Self::push_calls(state, NodeId::RecorderUpdate, meter)
            }
            Err(err) => {
                Self::push_calls(state, NodeId::RecorderUpdate, meter)?;
                self.role_failure(state, NodeId::RecorderUpdate, err)
            }
        }
    }

    /// Decides the final status when routing reaches the final recorder.
    fn conclude(&mut self, state: &mut RunState) -> Result<(), StepError> {
        let concluded = state.transcript.iter().rev().find_map(|e| match &e.body {
            EventBody::Plan { action } => Some(action.kind == ActionKind::Conclude),
            EventBody::GateDecision { .. } | EventBody::SummaryUpdate { .. } => Some(false),
            _ => None,
        });
        let (status, reason) = if state.goal_achieved() {
            (RunStatus::Succeeded, "evaluator confirmed the objective".to_string())
        } else if concluded == Some(true) {
            (RunStatus::Failed, "supervisor concluded without reaching the objective".to_string())
        } else {
            (
                RunStatus::AbortedIterations,
                format!("iteration limit of {} reached", state.max_iterations()),
            )
        };
        self.finish(state, status, &reason)
    }

    /// Records the terminal status change, then drafts and records the report.
    fn finish(&self, state: &mut RunState, status: RunStatus, reason: &str) -> Result<(), StepError> {
        let node = state.current_node;
        Self::push(
            state,
            node,
            EventBody::StatusChange {
                from: state.status,
                to: status,
                reason: reason.to_string(),
            },
        )?;
        let mut meter = self.meter(state);
        let report = generate_report(state, &mut meter).map_err(|e| StepError::Internal(e.to_string()))?;
        Self::push_calls(state, NodeId::RecorderFinal, meter)?;
        Self::push(state, NodeId::RecorderFinal, EventBody::Report { report })
    }
}
