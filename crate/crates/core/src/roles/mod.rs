//! The four agent behaviors: prompt assembly, provider invocation and strict
//! parsing of provider text into structured outcomes.

mod parse;
pub mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{supervisor_messages, Event, EventBody, NodeId, ProviderCall, RunState, RunStatus};
use crate::provider::{CompletionRequest, CompletionResponse, Provider, ProviderError};
use crate::tokens::{count_tokens, Message};
use crate::tools::{Decision, ToolResult};
use crate::util::{clip_middle, first_line};

pub use parse::{
    parse_action, parse_action_with_id, parse_report, parse_summary, parse_verdict, ParseError,
    ReportNarrative,
};

/// Attempts per structured call: the first try plus two corrective retries.
pub const MAX_PARSE_ATTEMPTS: u32 = 3;
/// Completion reserve added to the prompt estimate when projecting a call's cost.
pub const BUDGET_RESERVE: u64 = 1024;
pub const MAX_SUMMARY_TOKENS: u64 = 2000;
pub const TRUNCATION_MARKER: &str = "[…] ";
/// Tool output passed to the evaluator.
const EVALUATOR_OUTPUT_CHARS: usize = 16_000;
const RECORDER_OUTPUT_CHARS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub String);

impl ActionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn random() -> Self {
        Self(format!("act-{}", uuid::Uuid::new_v4().simple()))
    }

    /// Id for the plan that will be recorded at `seq`; unique within a run.
    pub fn for_seq(seq: u64) -> Self {
        Self(format!("act-{seq}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ActionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Shell,
    Script,
    Conclude,
}

/// One plan step produced by the supervisor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub action_id: ActionId,
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    GoalAchieved,
    Progress,
    Failure,
}

impl std::fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerdictStatus::GoalAchieved => "goal_achieved",
            VerdictStatus::Progress => "progress",
            VerdictStatus::Failure => "failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalVerdict {
    pub status: VerdictStatus,
    pub critique: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryUpdate {
    pub summary: String,
    #[serde(default)]
    pub new_findings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        }
    }
}

impl std::str::FromStr for Severity {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "info" => Ok(Severity::Info),
            "low" => Ok(Severity::Low),
            "medium" => Ok(Severity::Medium),
            "high" => Ok(Severity::High),
            "critical" => Ok(Severity::Critical),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub name: String,
    pub severity: Severity,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub seq: u64,
    pub node: NodeId,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub target_description: String,
    pub final_status: RunStatus,
    pub timeline: Vec<TimelineEntry>,
    pub findings: Vec<Finding>,
    pub outcome: String,
    pub token_usage_total: u64,
    /// False when the provider could not draft findings and outcome.
    pub narrative_available: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoleError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("token budget exhausted: {usage} used + {projected} projected > {budget}")]
    BudgetExhausted { usage: u64, projected: u64, budget: u64 },
    #[error("no valid action after {attempts} attempts: {last}")]
    MalformedAction { attempts: u32, last: ParseError },
    #[error("no valid verdict after {attempts} attempts: {last}")]
    MalformedVerdict { attempts: u32, last: ParseError },
    #[error("report requested while run is {0}")]
    RunNotFinished(RunStatus),
}

/// Provider wrapper that enforces the token budget before each call and records
/// usage for the `provider_call` events of the calling node.
pub struct Meter<'a> {
    provider: &'a dyn Provider,
    budget: Option<(u64, u64)>,
    spent: u64,
    calls: Vec<ProviderCall>,
}

impl<'a> Meter<'a> {
    pub fn unbounded(provider: &'a dyn Provider) -> Self {
        Self {
            provider,
            budget: None,
            spent: 0,
            calls: Vec::new(),
        }
    }

    /// `used` tokens are already consumed out of `budget`.
    pub fn budgeted(provider: &'a dyn Provider, used: u64, budget: u64) -> Self {
        Self {
            provider,
            budget: Some((used, budget)),
            spent: 0,
            calls: Vec::new(),
        }
    }

    /// Projected cost: the larger of what the backend declares for the next call and
    /// the prompt estimate plus the completion reserve.
    pub fn projected_cost(&self, req: &CompletionRequest) -> u64 {
        let estimate = req.prompt_estimate() + BUDGET_RESERVE;
        self.provider
            .projected_usage(req)
            .map_or(estimate, |declared| declared.max(estimate))
    }

    pub fn complete(&mut self, req: &CompletionRequest) -> Result<CompletionResponse, RoleError> {
        if let Some((used, budget)) = self.budget {
            let usage = used + self.spent;
            let projected = self.projected_cost(req);
            if usage + projected > budget {
                return Err(RoleError::BudgetExhausted {
                    usage,
                    projected,
                    budget,
                });
            }
        }
        let attempt = self.calls.len() as u32 + 1;
        match self.provider.complete(req) {
            Ok(resp) => {
                self.spent += resp.total_tokens();
                self.calls.push(ProviderCall {
                    provider_name: resp.provider_name.clone(),
                    attempt,
                    prompt_tokens: resp.prompt_tokens,
                    completion_tokens: resp.completion_tokens,
                    estimated: resp.estimated,
                    error: None,
                });
                Ok(resp)
            }
            Err(e) => {
                self.calls.push(ProviderCall {
                    provider_name: self.provider.name().to_string(),
                    attempt,
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    estimated: false,
                    error: Some(e.to_string()),
                });
                Err(RoleError::Provider(e))
            }
        }
    }

    pub fn spent(&self) -> u64 {
        self.spent
    }

    pub fn calls(&self) -> &[ProviderCall] {
        &self.calls
    }

    pub fn into_calls(self) -> Vec<ProviderCall> {
        self.calls
    }
}

/// Calls the provider and parses, retrying with a corrective instruction.
fn complete_parsed<T>(
    meter: &mut Meter<'_>,
    mut messages: Vec<Message>,
    correction: &str,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<T, (u32, ParseError, Option<RoleError>)> {
    let mut last = None;
    for attempt in 1..=MAX_PARSE_ATTEMPTS {
        let resp = match meter.complete(&CompletionRequest::new(messages.clone())) {
            Ok(r) => r,
            Err(e) => return Err((attempt, ParseError::NoBlock("response"), Some(e))),
        };
        match parse(&resp.content) {
            Ok(v) => return Ok(v),
            Err(e) => {
                tracing::debug!(attempt, error = %e, "unparseable provider reply");
                messages.push(Message::assistant(resp.content));
                messages.push(Message::user(format!("{correction}\nParse error: {e}")));
                last = Some(e);
            }
        }
    }
    Err((MAX_PARSE_ATTEMPTS, last.expect("at least one attempt"), None))
}

/// Asks the supervisor for the next action.
pub fn supervisor_plan(state: &RunState, meter: &mut Meter<'_>) -> Result<PlannedAction, RoleError> {
    let action_id = ActionId::for_seq(state.last_seq() + 1);
    complete_parsed(meter, supervisor_messages(state), prompts::ACTION_CORRECTION, |text| {
        parse_action_with_id(text, action_id.clone())
    })
    .map_err(|(attempts, last, err)| err.unwrap_or(RoleError::MalformedAction { attempts, last }))
}

pub fn evaluator_messages(action: &PlannedAction, result: &ToolResult, goal: &str) -> Vec<Message> {
    let mut body = format!(
        "Objective: {goal}\n\nExecuted {:?} action `{}`\nRationale: {}\n\nExit code: {}{}{}\n\nstdout:\n{}",
        action.kind,
        action.command.as_deref().unwrap_or(""),
        action.rationale,
        result.exit_code,
        if result.timed_out { " (timed out)" } else { "" },
        if result.truncated { " (output truncated)" } else { "" },
        clip_middle(&result.stdout, EVALUATOR_OUTPUT_CHARS),
    );
    if !result.stderr.is_empty() {
        body.push_str("\n\nstderr:\n");
        body.push_str(&clip_middle(&result.stderr, EVALUATOR_OUTPUT_CHARS / 4));
    }
    if let Some(err) = &result.error {
        body.push_str(&format!("\n\nexecution error: {err}"));
    }
    vec![Message::system(prompts::EVALUATOR_PERSONA), Message::user(body)]
}

/// Judges one tool result against the objective.
pub fn evaluate(
    action: &PlannedAction,
    result: &ToolResult,
    goal: &str,
    meter: &mut Meter<'_>,
) -> Result<EvalVerdict, RoleError> {
    complete_parsed(
        meter,
        evaluator_messages(action, result, goal),
        prompts::VERDICT_CORRECTION,
        parse_verdict,
    )
    .map_err(|(attempts, last, err)| err.unwrap_or(RoleError::MalformedVerdict { attempts, last }))
}

/// One-line description of an event for the recorder prompt.
pub fn describe_event(event: &Event) -> Option<String> {
    let seq = event.seq;
    Some(match &event.body {
        EventBody::Plan { action } => format!(
            "[{seq}] supervisor planned {:?} `{}`: {}",
            action.kind,
            action.command.as_deref().unwrap_or("-"),
            action.rationale
        ),
        EventBody::GateDecision {
            decision, actor, ..
        } => format!(
            "[{seq}] gate {:?}{}{}",
            decision.decision,
            decision
                .matched_pattern
                .as_ref()
                .map(|p| format!(" (pattern `{p}`)"))
                .unwrap_or_default(),
            actor.as_ref().map(|a| format!(" by {a}")).unwrap_or_default()
        ),
        EventBody::ToolOutput {
            command, result, ..
        } => format!(
            "[{seq}] ran `{command}` -> exit {}{}\n{}",
            result.exit_code,
            if result.timed_out { " (timed out)" } else { "" },
            clip_middle(result.stdout.trim_end(), RECORDER_OUTPUT_CHARS)
        ),
        EventBody::Verdict { verdict, .. } => {
            format!("[{seq}] evaluator: {} - {}", verdict.status, verdict.critique)
        }
        _ => return None,
    })
}

/// Mechanical digest line guaranteed to appear in the summary for this event.
fn digest_line(event: &Event) -> Option<String> {
    match &event.body {
        EventBody::ToolOutput {
            command, result, ..
        } => Some(format!("- `{command}` -> exit {}", result.exit_code)),
        EventBody::GateDecision {
            command,
            decision,
            ..
        } if matches!(decision.decision, Decision::Deny | Decision::Rejected) => Some(format!(
            "- `{}` blocked ({:?})",
            command.as_deref().unwrap_or("-"),
            decision.decision
        )),
        _ => None,
    }
}

/// Enforces the summary bound by dropping the oldest sentences behind a marker.
pub fn bound_summary(text: &str, max_tokens: u64) -> String {
    if count_tokens(text) <= max_tokens {
        return text.to_string();
    }
    let marker_tokens = count_tokens(TRUNCATION_MARKER);
    let budget_chars = ((max_tokens - marker_tokens) * 4) as usize;
    // sentence boundaries: after ". " and after newlines
    let mut starts = vec![0];
    for (i, c) in text.char_indices() {
        let next = i + c.len_utf8();
        if c == '\n' || (c == '.' && text[next..].starts_with(' ')) {
            starts.push(next);
        }
    }
    for start in starts {
        let rest = text[start..].trim_start();
        if rest.chars().count() <= budget_chars {
            return format!("{TRUNCATION_MARKER}{rest}");
        }
    }
    // a single sentence is still too long: keep its tail
    let total = text.chars().count();
    let tail: String = text.chars().skip(total - budget_chars).collect();
    format!("{TRUNCATION_MARKER}{tail}")
}

/// Updates the rolling summary with events the recorder has not seen yet.
pub fn record_step(
    summary: &str,
    new_events: &[Event],
    meter: &mut Meter<'_>,
) -> Result<SummaryUpdate, RoleError> {
    let described: Vec<String> = new_events.iter().filter_map(describe_event).collect();
    if described.is_empty() {
        return Ok(SummaryUpdate {
            summary: summary.to_string(),
            new_findings: Vec::new(),
        });
    }
    let prior = if summary.is_empty() { "(empty)" } else { summary };
    let messages = vec![
        Message::system(prompts::RECORDER_PERSONA),
        Message::user(format!(
            "Current summary:\n{prior}\n\nNew events:\n{}\n\nReturn the updated summary.",
            described.join("\n")
        )),
    ];
    let resp = meter.complete(&CompletionRequest::new(messages))?;
    let (mut narrative, new_findings) = parse_summary(&resp.content);
    for line in new_events.iter().filter_map(digest_line) {
        if !narrative.contains(&line) {
            if !narrative.is_empty() {
                narrative.push('\n');
            }
            narrative.push_str(&line);
        }
    }
    Ok(SummaryUpdate {
        summary: bound_summary(&narrative, MAX_SUMMARY_TOKENS),
        new_findings,
    })
}

fn timeline(state: &RunState) -> Vec<TimelineEntry> {
    state
        .transcript
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::ToolOutput {
                tool,
                command,
                result,
                ..
            } => {
                let mut digest = format!("{tool:?} `{}` -> exit {}", first_line(command, 120), result.exit_code);
                if result.timed_out {
                    digest.push_str(" (timed out)");
                }
                let line = first_line(&result.stdout, 100);
                if !line.is_empty() {
                    digest.push_str(": ");
                    digest.push_str(&line);
                }
                Some(TimelineEntry {
                    seq: e.seq,
                    node: e.node,
                    digest,
                })
            }
            _ => None,
        })
        .collect()
}

fn mechanical_outcome(state: &RunState) -> String {
    let what = match state.status {
        RunStatus::Succeeded => "The objective was achieved.",
        RunStatus::Failed => "The run failed before reaching the objective.",
        RunStatus::AbortedBudget => "The run stopped because the token budget was exhausted.",
        RunStatus::AbortedIterations => "The run stopped after reaching the iteration limit.",
        RunStatus::Running | RunStatus::AwaitingApproval => "The run is still in progress.",
    };
    match &state.last_verdict {
        Some(v) => format!("{what} Last evaluation: {} - {}", v.status, v.critique),
        None => what.to_string(),
    }
}

/// Builds the final report. The timeline comes from the event log; findings and
/// outcome are drafted by the provider, falling back to mechanical sections only.
pub fn generate_report(state: &RunState, meter: &mut Meter<'_>) -> Result<Report, RoleError> {
    if !state.status.is_terminal() {
        return Err(RoleError::RunNotFinished(state.status));
    }
    let timeline = timeline(state);
    let commands = if timeline.is_empty() {
        "(no commands were executed)".to_string()
    } else {
        timeline
            .iter()
            .map(|t| format!("[{}] {}", t.seq, t.digest))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let messages = vec![
        Message::system(prompts::REPORTER_PERSONA),
        Message::user(format!(
            "Objective: {}\nTarget: {}\nFinal status: {}\n\nSummary:\n{}\n\nCommands executed:\n{}",
            state.goal,
            state.target,
            state.status,
            if state.summary.is_empty() { "(empty)" } else { &state.summary },
            commands
        )),
    ];
    let narrative = match meter.complete(&CompletionRequest::new(messages)) {
        Ok(resp) => parse_report(&resp.content).map_err(|e| e.to_string()),
        Err(e) => Err(e.to_string()),
    };
    let status_line = format!("Final status: {}.", state.status);
    let (findings, outcome, narrative_available) = match narrative {
        Ok(n) => (n.findings, format!("{status_line} {}", n.outcome), true),
        Err(reason) => {
            tracing::warn!(%reason, "report narrative unavailable");
            (
                Vec::new(),
                format!("{status_line} {} (narrative unavailable)", mechanical_outcome(state)),
                false,
            )
        }
    };
    Ok(Report {
        title: format!("Penetration test report: {}", state.goal),
        target_description: state.target.clone(),
        final_status: state.status,
        timeline,
        findings,
        outcome,
        token_usage_total: state.token_usage + meter.spent(),
        narrative_available,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Limits, NodeId};
    use crate::provider::{ScriptRecord, ScriptedProvider};
    use crate::tools::ToolKind;

    fn scripted(contents: &[&str]) -> ScriptedProvider {
        ScriptedProvider::new(
            contents
                .iter()
                .enumerate()
                .map(|(i, c)| ScriptRecord::new(i, *c, 100, 20))
                .collect(),
        )
    }

    fn state() -> RunState {
        RunState::new("r".into(), "gain root on target", "10.0.2.7", Limits::default())
    }

    const SCAN: &str = "```action\nkind: shell\ncommand: nmap -sV 10.0.2.7\nrationale: enumerate services\n```";

    #[test]
    fn plan_parses_fixture_action() {
        let p = scripted(&[SCAN]);
        let mut meter = Meter::unbounded(&p);
        let a = supervisor_plan(&state(), &mut meter).unwrap();
        assert_eq!(a.kind, ActionKind::Shell);
        assert_eq!(a.command.as_deref(), Some("nmap -sV 10.0.2.7"));
        assert_eq!(a.action_id, ActionId::new("act-1"));
        assert_eq!(meter.calls().len(), 1);
    }

    #[test]
    fn plan_retries_after_prose() {
        let p = scripted(&["I think we should scan.", SCAN]);
        let mut meter = Meter::unbounded(&p);
        let a = supervisor_plan(&state(), &mut meter).unwrap();
        assert_eq!(a.command.as_deref(), Some("nmap -sV 10.0.2.7"));
        assert_eq!(meter.calls().len(), 2);
    }

    #[test]
    fn plan_gives_up_after_three_bad_replies() {
        let p = scripted(&["garbage", "more garbage", "```action\nkind: nuke\n```", SCAN]);
        let mut meter = Meter::unbounded(&p);
        let err = supervisor_plan(&state(), &mut meter).unwrap_err();
        assert!(matches!(err, RoleError::MalformedAction { attempts: 3, .. }));
        assert_eq!(meter.calls().len(), 3);
    }

    #[test]
    fn budget_checked_before_call() {
        let p = ScriptedProvider::new(vec![ScriptRecord::new(0, SCAN, 400, 100)]);
        let mut meter = Meter::budgeted(&p, 149_999, 150_000);
        let err = supervisor_plan(&state(), &mut meter).unwrap_err();
        assert!(matches!(err, RoleError::BudgetExhausted { usage: 149_999, .. }));
        assert_eq!(p.calls_made(), 0);
        assert!(meter.calls().is_empty());
    }

    fn root_result() -> ToolResult {
        ToolResult {
            exit_code: 0,
            stdout: "uid=0(root) gid=0(root)\n".into(),
            ..ToolResult::default()
        }
    }

    fn shell(cmd: &str) -> PlannedAction {
        PlannedAction {
            action_id: ActionId::new("act-1"),
            kind: ActionKind::Shell,
            command: Some(cmd.into()),
            rationale: "r".into(),
        }
    }

    #[test]
    fn evaluate_goal_achieved() {
        let p = ScriptedProvider::new(vec![ScriptRecord::new(
            0,
            "```verdict\nstatus: goal_achieved\ncritique: root shell obtained\n```",
            10,
            10,
        )
        .expecting("uid=0(root)")]);
        let v = evaluate(&shell("id"), &root_result(), "gain root", &mut Meter::unbounded(&p)).unwrap();
        assert_eq!(v.status, VerdictStatus::GoalAchieved);
    }

    #[test]
    fn evaluate_rejects_unknown_status_after_retries() {
        let bad = "```verdict\nstatus: maybe\ncritique: unsure\n```";
        let p = scripted(&[bad, bad, bad]);
        let mut meter = Meter::unbounded(&p);
        let err = evaluate(&shell("id"), &root_result(), "g", &mut meter).unwrap_err();
        assert!(matches!(
            err,
            RoleError::MalformedVerdict { attempts: 3, last: ParseError::UnknownStatus(_) }
        ));
    }

    fn tool_event(seq: u64, command: &str) -> Event {
        Event {
            seq,
            ts: chrono::Utc::now(),
            node: NodeId::Pentester,
            body: EventBody::ToolOutput {
                action_id: ActionId::new("act-1"),
                tool: ToolKind::Shell,
                command: command.into(),
                result: ToolResult {
                    stdout: "21/tcp open vsftpd 2.3.4\n".into(),
                    ..ToolResult::default()
                },
            },
        }
    }

    #[test]
    fn first_summary_mentions_command() {
        let p = scripted(&["Scanned the target; FTP is exposed."]);
        let u = record_step("", &[tool_event(3, "nmap -sV 10.0.2.7")], &mut Meter::unbounded(&p)).unwrap();
        assert!(u.summary.contains("nmap -sV 10.0.2.7"));
        assert!(u.summary.starts_with("Scanned the target"));
    }

    #[test]
    fn echoing_provider_only_appends_digest() {
        let prior = "Earlier: host discovered.";
        let p = scripted(&[prior]);
        let u = record_step(prior, &[tool_event(3, "whoami")], &mut Meter::unbounded(&p)).unwrap();
        assert_eq!(u.summary, format!("{prior}\n- `whoami` -> exit 0"));
    }

    #[test]
    fn oversized_summary_is_truncated() {
        let sentence = "The recorder wrote a long sentence about the scan. ";
        let long = sentence.repeat(12_000 / sentence.len() * 2);
        assert!(count_tokens(&long) > 3_000);
        let p = scripted(&[&long]);
        let u = record_step("", &[tool_event(3, "nmap -sV 10.0.2.7")], &mut Meter::unbounded(&p)).unwrap();
        assert!(count_tokens(&u.summary) <= MAX_SUMMARY_TOKENS);
        assert!(u.summary.starts_with(TRUNCATION_MARKER));
        // newest content survives
        assert!(u.summary.ends_with("- `nmap -sV 10.0.2.7` -> exit 0"));
    }

    #[test]
    fn bound_handles_single_huge_sentence() {
        let s = "x".repeat(20_000);
        let b = bound_summary(&s, 100);
        assert!(count_tokens(&b) <= 100);
        assert!(b.starts_with(TRUNCATION_MARKER));
    }

    #[test]
    fn report_requires_terminal_status() {
        let p = scripted(&[]);
        let err = generate_report(&state(), &mut Meter::unbounded(&p)).unwrap_err();
        assert_eq!(err, RoleError::RunNotFinished(RunStatus::Running));
    }

    #[test]
    fn report_falls_back_when_provider_fails() {
        let p = scripted(&[]);
        let mut s = state();
        s.status = RunStatus::AbortedBudget;
        let r = generate_report(&s, &mut Meter::unbounded(&p)).unwrap();
        assert!(!r.narrative_available);
        assert!(r.findings.is_empty());
        assert!(r.timeline.is_empty());
        assert!(r.outcome.contains("token budget"));
    }
}
