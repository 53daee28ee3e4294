use std::sync::Arc;

use crate::tools::{bound_text, ExecError, ExecutionBackend, ToolInvocation, ToolKind, ToolResult};

use super::{Scenario, SimOutput, TargetState};

/// Simulated wall-clock cost of one simple command.
pub const SIM_COMMAND_MS: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connector {
    /// First command, or after `;` or a newline.
    Always,
    /// After `&&`.
    OnSuccess,
    /// After `||`.
    OnFailure,
}

/// Splits a shell command list on unquoted `;`, `&&`, `||` and newlines.
/// Pipelines stay in one segment.
pub fn split_command_list(payload: &str) -> Vec<(Connector, String)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut next = Connector::Always;
    let mut quote: Option<char> = None;
    let mut chars = payload.chars().peekable();
    let flush = |current: &mut String, conn: Connector, out: &mut Vec<(Connector, String)>| {
        let seg = current.trim();
        if !seg.is_empty() {
            out.push((conn, seg.to_string()));
        }
        current.clear();
    };
    while let Some(c) = chars.next() {
        match quote {
            Some(q) => {
                current.push(c);
                if c == '\\' && q == '"' {
                    if let Some(n) = chars.next() {
                        current.push(n);
                    }
                } else if c == q {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => {
                    quote = Some(c);
                    current.push(c);
                }
                '\\' => {
                    current.push(c);
                    if let Some(n) = chars.next() {
                        current.push(n);
                    }
                }
                ';' | '\n' => {
                    flush(&mut current, next, &mut out);
                    next = Connector::Always;
                }
                '&' if chars.peek() == Some(&'&') => {
                    chars.next();
                    flush(&mut current, next, &mut out);
                    next = Connector::OnSuccess;
                }
                '|' if chars.peek() == Some(&'|') => {
                    chars.next();
                    flush(&mut current, next, &mut out);
                    next = Connector::OnFailure;
                }
                _ => current.push(c),
            },
        }
    }
    flush(&mut current, next, &mut out);
    out
}

/// Execution backend that runs commands against a simulated host.
/// Results are fully deterministic, including the reported duration.
#[derive(Debug, Clone)]
pub struct SimBackend {
    pub target: TargetState,
    pub max_output_bytes: usize,
}

impl SimBackend {
    pub fn new(scenario: Arc<Scenario>, max_output_bytes: usize) -> Self {
        Self {
            target: TargetState::new(scenario),
            max_output_bytes,
        }
    }

    pub fn run_payload(&mut self, tool: ToolKind, payload: &str) -> (SimOutput, u64) {
        let segments = match tool {
            ToolKind::Shell => split_command_list(payload),
            ToolKind::Script => payload
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| (Connector::Always, l.to_string()))
                .collect(),
        };
        let mut stdout = String::new();
        let mut stderr = String::new();
        let mut exit_code = 0;
        let mut ran = 0u64;
        for (conn, segment) in segments {
            let run = match conn {
                Connector::Always => true,
                Connector::OnSuccess => exit_code == 0,
                Connector::OnFailure => exit_code != 0,
            };
            if !run {
                continue;
            }
            let out = self.target.handle_command(&segment);
            ran += 1;
            stdout.push_str(&out.stdout);
            stderr.push_str(&out.stderr);
            exit_code = out.exit_code;
        }
        (
            SimOutput {
                exit_code,
                stdout,
                stderr,
            },
            ran * SIM_COMMAND_MS,
        )
    }
}

impl ExecutionBackend for SimBackend {
    fn name(&self) -> &str {
        "sim"
    }

    fn execute(&mut self, inv: &ToolInvocation) -> Result<ToolResult, ExecError> {
        if inv.payload.trim().is_empty() {
            return Err(ExecError::InvalidInvocation("empty payload".into()));
        }
        let (out, duration_ms) = self.run_payload(inv.tool, &inv.payload);
        let (stdout, stderr, truncated) = bound_text(&out.stdout, &out.stderr, self.max_output_bytes);
        Ok(ToolResult {
            exit_code: out.exit_code,
            stdout,
            stderr,
            truncated,
            duration_ms,
            timed_out: false,
            error: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segs(s: &str) -> Vec<String> {
        split_command_list(s).into_iter().map(|(_, s)| s).collect()
    }

    #[test]
    fn splits_lists_but_not_pipes_or_quotes() {
        assert_eq!(segs("a; b && c || d\ne"), ["a", "b", "c", "d", "e"]);
        assert_eq!(segs("echo 'x; y' | nc h 21"), ["echo 'x; y' | nc h 21"]);
        assert_eq!(segs(r#"msf -x "use a; run""#), [r#"msf -x "use a; run""#]);
        assert_eq!(segs(r"a \; b"), [r"a \; b"]);
        assert!(segs("  ;; ").is_empty());
        let conns: Vec<Connector> = split_command_list("a && b || c; d").into_iter().map(|(c, _)| c).collect();
        assert_eq!(
            conns,
            [Connector::Always, Connector::OnSuccess, Connector::OnFailure, Connector::Always]
        );
    }
}
