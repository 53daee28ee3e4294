//! The fixed routing table.
//!
//! ```text
//! supervisor{shell,script}   -> policy_gate
//! supervisor{conclude}       -> recorder_final
//! policy_gate{allow,approved}-> pentester
//! policy_gate{deny,rejected} -> supervisor        (recorder_final once limits are exhausted)
//! policy_gate{require_approval} -> policy_gate    (suspended until a human decides)
//! pentester                  -> evaluator
//! evaluator                  -> recorder_update
//! recorder_update            -> supervisor        (verdict progress/failure, limits permit)
//! recorder_update            -> recorder_final    (goal_achieved or limits exhausted)
//! recorder_final             -> terminal
//! ```

use thiserror::Error;

use crate::roles::{ActionKind, EvalVerdict, PlannedAction, VerdictStatus};
use crate::tools::{Decision, GateDecision, ToolResult};

use super::NodeId;

/// The structured result a node hands to the router.
#[derive(Debug, Clone, Copy)]
pub enum NodeOutcome<'a> {
    Plan(&'a PlannedAction),
    Gate {
        decision: &'a GateDecision,
        limits_exhausted: bool,
    },
    Tool(&'a ToolResult),
    Verdict(&'a EvalVerdict),
    Summary {
        verdict: Option<VerdictStatus>,
        limits_exhausted: bool,
    },
    Report,
}

impl NodeOutcome<'_> {
    fn name(&self) -> &'static str {
        match self {
            NodeOutcome::Plan(_) => "PlannedAction",
            NodeOutcome::Gate { .. } => "GateDecision",
            NodeOutcome::Tool(_) => "ToolResult",
            NodeOutcome::Verdict(_) => "EvalVerdict",
            NodeOutcome::Summary { .. } => "SummaryUpdate",
            NodeOutcome::Report => "Report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("node {node} cannot produce outcome {outcome}")]
pub struct InvalidOutcomeType {
    pub node: NodeId,
    pub outcome: &'static str,
}

pub fn route(current: NodeId, outcome: NodeOutcome<'_>) -> Result<NodeId, InvalidOutcomeType> {
    use NodeId::*;
    let next = match (current, outcome) {
        (Supervisor, NodeOutcome::Plan(action)) => match action.kind {
            ActionKind::Shell | ActionKind::Script => PolicyGate,
            ActionKind::Conclude => RecorderFinal,
        },
        (PolicyGate, NodeOutcome::Gate { decision, limits_exhausted }) => match decision.decision {
            Decision::Allow | Decision::Approved => Pentester,
            Decision::RequireApproval => PolicyGate,
            Decision::Deny | Decision::Rejected if limits_exhausted => RecorderFinal,
            Decision::Deny | Decision::Rejected => Supervisor,
        },
        (Pentester, NodeOutcome::Tool(_)) => Evaluator,
        (Evaluator, NodeOutcome::Verdict(_)) => RecorderUpdate,
        (RecorderUpdate, NodeOutcome::Summary { verdict, limits_exhausted }) => {
            if verdict == Some(VerdictStatus::GoalAchieved) || limits_exhausted {
                RecorderFinal
            } else {
                Supervisor
            }
        }
        (RecorderFinal, NodeOutcome::Report) => Terminal,
        (node, outcome) => {
            return Err(InvalidOutcomeType {
                node,
                outcome: outcome.name(),
            })
        }
    };
    Ok(next)
}
