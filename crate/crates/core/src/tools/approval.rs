use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{compress_context, EventBody, NodeId, RunState, RunStatus};
use crate::roles::ActionId;

use super::GateDecision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalVerdict {
    Approve,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApprovalError {
    #[error("run has no pending approval")]
    NoPendingApproval,
    #[error("action id mismatch: pending {pending}, got {given}")]
    ActionIdMismatch { pending: ActionId, given: ActionId },
}

/// Applies a human decision to a run suspended at the policy gate.
///
/// Approve resumes into the pentester; reject records the refusal, which the
/// supervisor sees as a notice in its next prompt. The state is untouched on error.
pub fn resolve_approval(
    state: &mut RunState,
    action_id: &ActionId,
    verdict: ApprovalVerdict,
    actor: &str,
) -> Result<(), ApprovalError> {
    let pending = match (&state.status, &state.pending_action) {
        (RunStatus::AwaitingApproval, Some(p)) => p.clone(),
        _ => return Err(ApprovalError::NoPendingApproval),
    };
    if &pending.action_id != action_id {
        return Err(ApprovalError::ActionIdMismatch {
            pending: pending.action_id,
            given: action_id.clone(),
        });
    }
    let approved = verdict == ApprovalVerdict::Approve;
    let reason = format!(
        "{} by {actor}",
        if approved { "approved" } else { "rejected" }
    );
    state
        .record(
            NodeId::PolicyGate,
            EventBody::StatusChange {
                from: RunStatus::AwaitingApproval,
                to: RunStatus::Running,
                reason,
            },
        )
        .expect("status change applies");
    state
        .record(
            NodeId::PolicyGate,
            EventBody::GateDecision {
                action_id: pending.action_id.clone(),
                command: pending.command.clone(),
                decision: GateDecision::by_human(approved),
                actor: Some(actor.to_string()),
            },
        )
        .expect("gate decision applies at the policy gate");
    compress_context(state);
    Ok(())
}
