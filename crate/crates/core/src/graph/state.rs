use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roles::{EvalVerdict, PlannedAction, VerdictStatus};
use crate::tools::{Decision, ToolResult};

use super::route::{route, InvalidOutcomeType, NodeOutcome};
use super::{Event, EventBody, NodeId};

pub const DEFAULT_TOKEN_BUDGET: u64 = 150_000;
pub const DEFAULT_MAX_ITERATIONS: u32 = 30;
pub const DEFAULT_CONTEXT_WINDOW: u64 = 8_000;
pub const DEFAULT_KEEP_VERBATIM_TAIL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub token_budget: u64,
    pub max_iterations: u32,
    pub context_window_limit: u64,
    pub keep_verbatim_tail: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            context_window_limit: DEFAULT_CONTEXT_WINDOW,
            keep_verbatim_tail: DEFAULT_KEEP_VERBATIM_TAIL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid limits: {0}")]
pub struct InvalidLimits(pub &'static str);

impl Limits {
    pub fn validate(&self) -> Result<(), InvalidLimits> {
        if self.token_budget == 0 {
            return Err(InvalidLimits("token_budget must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(InvalidLimits("max_iterations must be positive"));
        }
        if self.context_window_limit == 0 {
            return Err(InvalidLimits("context_window_limit must be positive"));
        }
        if self.keep_verbatim_tail == 0 {
            return Err(InvalidLimits("keep_verbatim_tail must be positive"));
        }
        if self.keep_verbatim_tail >= self.max_iterations as usize {
            return Err(InvalidLimits("keep_verbatim_tail must be below max_iterations"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    AwaitingApproval,
    Succeeded,
    Failed,
    AbortedBudget,
    AbortedIterations,
}

impl RunStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            RunStatus::Succeeded | RunStatus::Failed | RunStatus::AbortedBudget | RunStatus::AbortedIterations
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::AwaitingApproval => "awaiting_approval",
            RunStatus::Succeeded => "succeeded",
            RunStatus::Failed => "failed",
            RunStatus::AbortedBudget => "aborted_budget",
            RunStatus::AbortedIterations => "aborted_iterations",
        }
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(pub String);

impl RunId {
    pub fn random() -> Self {
        Self(uuid::Uuid::new_v4().simple().to_string())
    }
}

impl std::fmt::Display for RunId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RunId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("event seq {found} out of order (expected {expected})")]
    SeqGap { expected: u64, found: u64 },
    #[error("event {seq}: {source}")]
    Route {
        seq: u64,
        #[source]
        source: InvalidOutcomeType,
    },
    #[error("event {seq} emitted by {node} while the run was at {current}")]
    WrongNode { seq: u64, node: NodeId, current: NodeId },
    #[error("event {seq} arrived after the run terminated")]
    AfterTerminal { seq: u64 },
}

/// Full state of one episode. Every field except the transcript itself is a
/// fold over the transcript, see [`RunState::apply`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: RunId,
    pub goal: String,
    /// Human-readable description of what is being tested.
    pub target: String,
    pub limits: Limits,
    pub transcript: Vec<Event>,
    pub summary: String,
    pub token_usage: u64,
    pub iteration: u32,
    pub status: RunStatus,
    pub current_node: NodeId,
    pub pending_action: Option<PlannedAction>,
    pub last_action: Option<PlannedAction>,
    pub last_result: Option<ToolResult>,
    pub last_verdict: Option<EvalVerdict>,
    /// Seq of the most recent summary update; later events are not yet summarized.
    pub summarized_through: u64,
    /// Index of the first exchange kept verbatim in the supervisor prompt.
    pub context_from: usize,
}

impl RunState {
    pub fn new(run_id: RunId, goal: impl Into<String>, target: impl Into<String>, limits: Limits) -> Self {
        Self {
            run_id,
            goal: goal.into(),
            target: target.into(),
            limits,
            transcript: Vec::new(),
            summary: String::new(),
            token_usage: 0,
            iteration: 0,
            status: RunStatus::Running,
            current_node: NodeId::Supervisor,
            pending_action: None,
            last_action: None,
            last_result: None,
            last_verdict: None,
            summarized_through: 0,
            context_from: 0,
        }
    }

    pub fn token_budget(&self) -> u64 {
        self.limits.token_budget
    }

    pub fn max_iterations(&self) -> u32 {
        self.limits.max_iterations
    }

    pub fn last_seq(&self) -> u64 {
        self.transcript.last().map_or(0, |e| e.seq)
    }

    pub fn iterations_exhausted(&self) -> bool {
        self.iteration >= self.limits.max_iterations
    }

    pub fn goal_achieved(&self) -> bool {
        self.transcript.iter().any(|e| {
            matches!(&e.body, EventBody::Verdict { verdict, .. } if verdict.status == VerdictStatus::GoalAchieved)
        })
    }

    /// Events after the last summary update that the recorder has not seen.
    pub fn unsummarized(&self) -> &[Event] {
        let start = self
            .transcript
            .iter()
            .position(|e| e.seq > self.summarized_through)
            .unwrap_or(self.transcript.len());
        &self.transcript[start..]
    }

    /// Appends a freshly timestamped event at the next seq and folds it in.
    pub fn record(&mut self, node: NodeId, body: EventBody) -> Result<&Event, ReplayError> {
        let event = Event {
            seq: self.last_seq() + 1,
            ts: Utc::now(),
            node,
            body,
        };
        self.apply(event)?;
        Ok(self.transcript.last().expect("just pushed"))
    }

    /// Folds one event into the state. This is the only place run state changes,
    /// so replaying a persisted log reproduces the engine's state exactly.
    pub fn apply(&mut self, event: Event) -> Result<(), ReplayError> {
        let expected = self.last_seq() + 1;
        if event.seq != expected {
            return Err(ReplayError::SeqGap {
                expected,
                found: event.seq,
            });
        }
        if self.current_node == NodeId::Terminal {
            return Err(ReplayError::AfterTerminal { seq: event.seq });
        }
        let seq = event.seq;
        let routed = |current: NodeId, outcome: NodeOutcome<'_>| {
            route(current, outcome).map_err(|source| ReplayError::Route { seq, source })
        };
        let check_node = |current: NodeId| {
            if event.node != current {
                Err(ReplayError::WrongNode {
                    seq,
                    node: event.node,
                    current,
                })
            } else {
                Ok(())
            }
        };
        match &event.body {
            EventBody::Plan { action } => {
                check_node(self.current_node)?;
                self.current_node = routed(self.current_node, NodeOutcome::Plan(action))?;
                self.last_action = Some(action.clone());
            }
            EventBody::GateDecision { decision, .. } => {
                check_node(self.current_node)?;
                match decision.decision {
                    Decision::RequireApproval => self.pending_action = self.last_action.clone(),
                    Decision::Allow | Decision::Approved => self.pending_action = None,
                    Decision::Deny | Decision::Rejected => {
                        self.pending_action = None;
                        self.iteration = (self.iteration + 1).min(self.limits.max_iterations);
                    }
                }
                let limits_exhausted = self.iterations_exhausted();
                self.current_node = routed(
                    self.current_node,
                    NodeOutcome::Gate {
                        decision,
                        limits_exhausted,
                    },
                )?;
            }
            EventBody::ToolOutput { result, .. } => {
                check_node(self.current_node)?;
                self.current_node = routed(self.current_node, NodeOutcome::Tool(result))?;
                self.last_result = Some(result.clone());
            }
            EventBody::Verdict { verdict, .. } => {
                check_node(self.current_node)?;
                self.current_node = routed(self.current_node, NodeOutcome::Verdict(verdict))?;
                self.last_verdict = Some(verdict.clone());
            }
            EventBody::SummaryUpdate { update } => {
                check_node(self.current_node)?;
                self.summary = update.summary.clone();
                self.summarized_through = seq;
                self.iteration = (self.iteration + 1).min(self.limits.max_iterations);
                let limits_exhausted = self.iterations_exhausted();
                self.current_node = routed(
                    self.current_node,
                    NodeOutcome::Summary {
                        verdict: self.last_verdict.as_ref().map(|v| v.status),
                        limits_exhausted,
                    },
                )?;
            }
            EventBody::Report { .. } => {
                check_node(self.current_node)?;
                self.current_node = routed(self.current_node, NodeOutcome::Report)?;
            }
            EventBody::StatusChange { to, .. } => {
                self.status = *to;
                if to.is_terminal() {
                    self.current_node = NodeId::RecorderFinal;
                    self.pending_action = None;
                }
            }
            EventBody::ProviderCall(call) => {
                self.token_usage += call.total();
            }
        }
        self.transcript.push(event);
        Ok(())
    }

    /// Rebuilds a state by folding a persisted log onto a fresh run.
    pub fn replay(
        run_id: RunId,
        goal: impl Into<String>,
        target: impl Into<String>,
        limits: Limits,
        events: impl IntoIterator<Item = Event>,
    ) -> Result<Self, ReplayError> {
        let mut state = Self::new(run_id, goal, target, limits);
        for event in events {
            state.apply(event)?;
        }
        super::compress_context(&mut state);
        Ok(state)
    }

    /// Equality that ignores event timestamps.
    pub fn eq_ignoring_timestamps(&self, other: &Self) -> bool {
        let strip = |s: &Self| {
            let mut s = s.clone();
            for e in &mut s.transcript {
                e.ts = chrono::DateTime::<Utc>::UNIX_EPOCH;
            }
            s
        };
        strip(self) == strip(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_limits_are_valid() {
        let l = Limits::default();
        assert_eq!(l.token_budget, 150_000);
        assert_eq!(l.max_iterations, 30);
        assert_eq!(l.context_window_limit, 8_000);
        assert_eq!(l.keep_verbatim_tail, 5);
        assert!(l.validate().is_ok());
    }

    #[test]
    fn tail_must_be_below_iterations() {
        let l = Limits {
            max_iterations: 5,
            ..Limits::default()
        };
        assert!(l.validate().is_err());
    }

    #[test]
    fn seq_must_be_gapless() {
        let mut s = RunState::new("r".into(), "g", "t", Limits::default());
        s.record(
            NodeId::Supervisor,
            EventBody::ProviderCall(crate::graph::ProviderCall {
                provider_name: "p".into(),
                attempt: 1,
                prompt_tokens: 3,
                completion_tokens: 4,
                estimated: false,
                error: None,
            }),
        )
        .unwrap();
        assert_eq!(s.token_usage, 7);
        let mut bad = s.transcript[0].clone();
        bad.seq = 3;
        assert_eq!(
            s.apply(bad).unwrap_err(),
            ReplayError::SeqGap { expected: 2, found: 3 }
        );
    }
}
