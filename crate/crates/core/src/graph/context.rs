//! Supervisor prompt assembly and context-window compression.

use crate::roles::prompts::SUPERVISOR_PERSONA;
use crate::roles::{ActionKind, PlannedAction};
use crate::tokens::{prompt_tokens, Message};
use crate::tools::Decision;
use crate::util::clip_middle;

use super::{Event, EventBody, RunState};

/// Tool output kept per exchange in the supervisor prompt.
const EXCHANGE_OUTPUT_CHARS: usize = 4_000;

/// One supervisor plan together with everything that followed it.
#[derive(Debug, Clone, Copy)]
pub struct Exchange<'a> {
    pub events: &'a [Event],
}

/// Splits the transcript at plan events. Events before the first plan are not part
/// of any exchange.
pub fn exchanges(transcript: &[Event]) -> Vec<Exchange<'_>> {
    let starts: Vec<usize> = transcript
        .iter()
        .enumerate()
        .filter(|(_, e)| matches!(e.body, EventBody::Plan { .. }))
        .map(|(i, _)| i)
        .collect();
    starts
        .iter()
        .enumerate()
        .map(|(n, &start)| {
            let end = starts.get(n + 1).copied().unwrap_or(transcript.len());
            Exchange {
                events: &transcript[start..end],
            }
        })
        .collect()
}

pub fn render_action(action: &PlannedAction) -> String {
    let kind = match action.kind {
        ActionKind::Shell => "shell",
        ActionKind::Script => "script",
        ActionKind::Conclude => "conclude",
    };
    let mut out = format!("```action\nkind: {kind}\n");
    if let Some(cmd) = &action.command {
        out.push_str(&format!("command: {cmd}\n"));
    }
    out.push_str(&format!("rationale: {}\n```", action.rationale));
    out
}

impl Exchange<'_> {
    pub fn render(&self) -> Vec<Message> {
        let mut out = Vec::new();
        let mut observations = Vec::new();
        for event in self.events {
            match &event.body {
                EventBody::Plan { action } => out.push(Message::assistant(render_action(action))),
                EventBody::GateDecision {
                    decision, actor, ..
                } => match decision.decision {
                    Decision::Deny => observations.push(format!(
                        "Policy gate denied this action{}. It was not executed; plan a different action.",
                        decision
                            .matched_pattern
                            .as_ref()
                            .map(|p| format!(" (matched `{p}`)"))
                            .unwrap_or_default()
                    )),
                    Decision::Rejected => observations.push(format!(
                        "The operator{} rejected this action. It was not executed; plan a different action.",
                        actor.as_ref().map(|a| format!(" {a}")).unwrap_or_default()
                    )),
                    _ => {}
                },
                EventBody::ToolOutput {
                    command, result, ..
                } => {
                    let mut text = format!("Output of `{command}` (exit {}", result.exit_code);
                    if result.timed_out {
                        text.push_str(", timed out");
                    }
                    text.push_str("):\n");
                    text.push_str(&clip_middle(&result.stdout, EXCHANGE_OUTPUT_CHARS));
                    if !result.stderr.is_empty() {
                        text.push_str("\n[stderr]\n");
                        text.push_str(&clip_middle(&result.stderr, EXCHANGE_OUTPUT_CHARS / 4));
                    }
                    observations.push(text);
                }
                EventBody::Verdict { verdict, .. } => {
                    let mut text = format!("Evaluator: {} - {}", verdict.status, verdict.critique);
                    if let Some(s) = &verdict.suggestion {
                        text.push_str(&format!("\nSuggestion: {s}"));
                    }
                    observations.push(text);
                }
                _ => {}
            }
        }
        if !observations.is_empty() {
            out.push(Message::tool(observations.join("\n\n")));
        }
        out
    }
}

fn supervisor_messages_from(state: &RunState, from: usize, with_summary: bool) -> Vec<Message> {
    let mut messages = vec![
        Message::system(SUPERVISOR_PERSONA),
        Message::user(format!("Objective: {}\nTarget: {}", state.goal, state.target)),
    ];
    if with_summary {
        messages.push(Message::user(format!(
            "Summary of earlier activity:\n{}",
            state.summary
        )));
    }
    for exchange in exchanges(&state.transcript).iter().skip(from) {
        messages.extend(exchange.render());
    }
    let mut closing = String::new();
    if let Some(v) = &state.last_verdict {
        closing.push_str(&format!("Latest evaluation: {} - {}\n", v.status, v.critique));
        if let Some(s) = &v.suggestion {
            closing.push_str(&format!("Suggested next step: {s}\n"));
        }
    }
    closing.push_str("Plan the single next action. Reply with exactly one ```action block.");
    messages.push(Message::user(closing));
    messages
}

/// The prompt the supervisor would send for the current state.
pub fn supervisor_messages(state: &RunState) -> Vec<Message> {
    supervisor_messages_from(state, state.context_from, state.context_from > 0)
}

fn summary_estimate(state: &RunState) -> u64 {
    Message::user(format!("Summary of earlier activity:\n{}", state.summary)).token_estimate
}

/// Keeps the supervisor prompt within the context window.
///
/// When the full transcript prompt exceeds the limit, older exchanges are replaced
/// by the rolling summary and at most `keep_verbatim_tail` recent exchanges stay
/// verbatim. Fewer are kept if the tail alone would still overflow. The summary
/// itself is never truncated here.
pub fn compress_context(state: &mut RunState) {
    let limit = state.limits.context_window_limit;
    if prompt_tokens(&supervisor_messages_from(state, 0, false)) <= limit {
        if state.context_from != 0 {
            state.context_from = 0;
        }
        return;
    }
    let total = exchanges(&state.transcript).len();
    let mut from = total.saturating_sub(state.limits.keep_verbatim_tail);
    while from < total {
        let estimate = prompt_tokens(&supervisor_messages_from(state, from, true));
        if estimate.saturating_sub(summary_estimate(state)) <= limit {
            break;
        }
        from += 1;
    }
    state.context_from = from;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Limits, NodeId};
    use crate::roles::{ActionId, EvalVerdict, VerdictStatus};
    use crate::tools::{DecidedBy, GateDecision, ToolKind, ToolResult};

    /// Builds a transcript of `n` allowed exchanges whose outputs are `chars` long.
    fn synthetic(n: usize, chars: usize) -> RunState {
        let limits = Limits {
            max_iterations: 1000,
            ..Limits::default()
        };
        let mut s = RunState::new("r".into(), "gain root on target", "10.0.2.7", limits);
        for i in 0..n {
            let id = ActionId::new(format!("a{i}"));
            let command = format!("probe --step {i}");
            s.record(
                NodeId::Supervisor,
                EventBody::Plan {
                    action: PlannedAction {
                        action_id: id.clone(),
                        kind: ActionKind::Shell,
                        command: Some(command.clone()),
                        rationale: format!("exchange marker #{i}#"),
                    },
                },
            )
            .unwrap();
            s.record(
                NodeId::PolicyGate,
                EventBody::GateDecision {
                    action_id: id.clone(),
                    command: Some(command.clone()),
                    decision: GateDecision {
                        decision: Decision::Allow,
                        matched_pattern: None,
                        decided_by: DecidedBy::Policy,
                    },
                    actor: None,
                },
            )
            .unwrap();
            s.record(
                NodeId::Pentester,
                EventBody::ToolOutput {
                    action_id: id.clone(),
                    tool: ToolKind::Shell,
                    command,
                    result: ToolResult {
                        stdout: "x".repeat(chars),
                        ..ToolResult::default()
                    },
                },
            )
            .unwrap();
            s.record(
                NodeId::Evaluator,
                EventBody::Verdict {
                    action_id: id,
                    verdict: EvalVerdict {
                        status: VerdictStatus::Progress,
                        critique: "keep going".into(),
                        suggestion: None,
                    },
                },
            )
            .unwrap();
            s.record(
                NodeId::RecorderUpdate,
                EventBody::SummaryUpdate {
                    update: crate::roles::SummaryUpdate {
                        summary: format!("summary after {i}"),
                        new_findings: vec![],
                    },
                },
            )
            .unwrap();
        }
        s
    }

    fn retained_markers(messages: &[Message]) -> Vec<usize> {
        let re = regex::Regex::new(r"exchange marker #(\d+)#").unwrap();
        messages
            .iter()
            .flat_map(|m| re.captures_iter(&m.content).map(|c| c[1].parse().unwrap()).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn under_limit_is_identity() {
        let mut s = synthetic(3, 100);
        let before = s.clone();
        compress_context(&mut s);
        assert_eq!(s, before);
    }

    #[test]
    fn empty_transcript_is_identity() {
        let mut s = RunState::new("r".into(), "g", "t", Limits::default());
        let before = s.clone();
        compress_context(&mut s);
        assert_eq!(s, before);
    }

    #[test]
    fn estimate_just_below_limit_is_identity() {
        // size the goal so the full prompt sits exactly one token below the window
        let mut s = synthetic(1, 100);
        let base = prompt_tokens(&supervisor_messages(&s));
        let goal = s.goal.clone();
        let mut pad = ((7_999 - base) * 4) as usize;
        loop {
            s.goal = format!("{goal}{}", "g".repeat(pad));
            let estimate = prompt_tokens(&supervisor_messages(&s));
            if estimate == 7_999 {
                break;
            }
            assert!(estimate < 7_999, "overshot: {estimate}");
            pad += 1;
        }
        let before = s.clone();
        compress_context(&mut s);
        assert_eq!(s, before);
        s.goal.push_str("gggggggg");
        compress_context(&mut s);
        assert_eq!(s.context_from, 1);
    }

    #[test]
    fn forty_exchanges_keep_summary_and_last_five() {
        let mut s = synthetic(40, 1_800);
        let full = prompt_tokens(&supervisor_messages(&s));
        assert!(full > 8_000, "synthetic prompt too small: {full}");
        compress_context(&mut s);
        let messages = supervisor_messages(&s);
        assert_eq!(retained_markers(&messages), vec![35, 36, 37, 38, 39]);
        assert!(messages.iter().any(|m| m.content.contains("summary after 39")));
        let bound = 8_000 + summary_estimate(&s);
        assert!(prompt_tokens(&messages) <= bound);
    }

    #[test]
    fn oversized_exchanges_shrink_the_tail() {
        let mut s = synthetic(10, 40_000);
        s.limits.context_window_limit = 3_000;
        compress_context(&mut s);
        let messages = supervisor_messages(&s);
        let kept = retained_markers(&messages);
        assert!(kept.len() < 5);
        assert!(prompt_tokens(&messages) <= 3_000 + summary_estimate(&s));
    }
}
