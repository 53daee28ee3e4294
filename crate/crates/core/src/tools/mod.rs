//! Policy gate, approval handling and sandboxed execution of planned actions.

mod approval;
mod exec;
mod policy;

pub use approval::{resolve_approval, ApprovalError, ApprovalVerdict};
pub use exec::{
    bound_output, bound_text, Capture, ExecError, ExecutionBackend, SubprocessBackend, ToolInvocation,
    ToolKind, ToolResult, DEFAULT_PATH, KILLED_EXIT_CODE,
};
pub use policy::{
    check_command, check_policy, DecidedBy, Decision, GateDecision, PolicyError, PolicyFile,
    SafetyPolicy, DEFAULT_MAX_OUTPUT_BYTES, DEFAULT_TIMEOUT_SECONDS, POLICY_FORMAT_VERSION,
};
