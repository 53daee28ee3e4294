use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::roles::{ActionId, EvalVerdict, PlannedAction, Report, SummaryUpdate};
use crate::tools::{GateDecision, ToolKind, ToolResult};

use super::RunStatus;

/// Graph nodes. The topology is fixed; see [`super::route`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeId {
    Supervisor,
    Pentester,
    Evaluator,
    RecorderUpdate,
    RecorderFinal,
    PolicyGate,
    Terminal,
}

impl NodeId {
    pub fn as_str(&self) -> &'static str {
        match self {
            NodeId::Supervisor => "supervisor",
            NodeId::Pentester => "pentester",
            NodeId::Evaluator => "evaluator",
            NodeId::RecorderUpdate => "recorder_update",
            NodeId::RecorderFinal => "recorder_final",
            NodeId::PolicyGate => "policy_gate",
            NodeId::Terminal => "terminal",
        }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Plan,
    GateDecision,
    ToolOutput,
    Verdict,
    SummaryUpdate,
    Report,
    StatusChange,
    ProviderCall,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Plan => "plan",
            EventKind::GateDecision => "gate_decision",
            EventKind::ToolOutput => "tool_output",
            EventKind::Verdict => "verdict",
            EventKind::SummaryUpdate => "summary_update",
            EventKind::Report => "report",
            EventKind::StatusChange => "status_change",
            EventKind::ProviderCall => "provider_call",
        }
    }
}

/// Usage record for one provider round trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderCall {
    pub provider_name: String,
    /// 1-based attempt within the node's parse-retry loop.
    pub attempt: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default)]
    pub estimated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProviderCall {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Plan {
        action: PlannedAction,
    },
    GateDecision {
        action_id: ActionId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<String>,
        decision: GateDecision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        actor: Option<String>,
    },
    ToolOutput {
        action_id: ActionId,
        tool: ToolKind,
        command: String,
        result: ToolResult,
    },
    Verdict {
        action_id: ActionId,
        verdict: EvalVerdict,
    },
    SummaryUpdate {
        update: SummaryUpdate,
    },
    Report {
        report: Report,
    },
    StatusChange {
        from: RunStatus,
        to: RunStatus,
        reason: String,
    },
    ProviderCall(ProviderCall),
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::Plan { .. } => EventKind::Plan,
            EventBody::GateDecision { .. } => EventKind::GateDecision,
            EventBody::ToolOutput { .. } => EventKind::ToolOutput,
            EventBody::Verdict { .. } => EventKind::Verdict,
            EventBody::SummaryUpdate { .. } => EventKind::SummaryUpdate,
            EventBody::Report { .. } => EventKind::Report,
            EventBody::StatusChange { .. } => EventKind::StatusChange,
            EventBody::ProviderCall(_) => EventKind::ProviderCall,
        }
    }
}

/// One entry of a run transcript. Serializes as `{seq, ts, node, kind, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    pub node: NodeId,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    /// JSON form with the timestamp removed, used for determinism comparisons.
    pub fn canonical_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("events serialize");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("ts");
        }
        value.to_string()
    }
}

/// SHA-256 over the canonical (timestamp-free) form of a log.
pub fn canonical_hash(events: &[Event]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for e in events {
        hasher.update(e.canonical_json().as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_match_serde() {
        for kind in [
            EventKind::Plan,
            EventKind::GateDecision,
            EventKind::ToolOutput,
            EventKind::Verdict,
            EventKind::SummaryUpdate,
            EventKind::Report,
            EventKind::StatusChange,
            EventKind::ProviderCall,
        ] {
            assert_eq!(serde_json::to_value(kind).unwrap(), kind.as_str());
        }
    }
}
