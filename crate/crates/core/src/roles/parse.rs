//! Line-oriented grammars for turning provider text into structured outcomes.
//!
//! Agents answer inside a fenced block tagged with the outcome name:
//!
//! ````text
//! ```action
//! kind: shell
//! command: nmap -sV 10.0.2.7
//! rationale: enumerate exposed services
//! ```
//! ````
//!
//! A line that does not start with a known `key:` continues the previous field,
//! which lets `script` actions carry multi-line sources.

use thiserror::Error;

use super::{ActionId, ActionKind, EvalVerdict, Finding, PlannedAction, Severity, VerdictStatus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no ```{0} block found")]
    NoBlock(&'static str),
    #[error("unknown action kind `{0}`")]
    UnknownKind(String),
    #[error("unknown verdict status `{0}`")]
    UnknownStatus(String),
    #[error("unknown severity `{0}`")]
    UnknownSeverity(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` is not allowed here")]
    UnexpectedField(&'static str),
    #[error("malformed field `{field}`: {reason}")]
    Malformed { field: &'static str, reason: String },
}

/// Lines between the first ```` ```tag ```` fence and its closing fence.
fn fenced_block<'a>(text: &'a str, tag: &str) -> Option<Vec<&'a str>> {
    let mut lines = text.lines();
    loop {
        let line = lines.next()?;
        let trimmed = line.trim();
        if let Some(rest) = trimmed.strip_prefix("```") {
            if rest.trim().eq_ignore_ascii_case(tag) {
                break;
            }
        }
    }
    let mut body = Vec::new();
    for line in lines {
        if line.trim() == "```" {
            return Some(body);
        }
        body.push(line);
    }
    // unterminated block
    None
}

/// Splits block lines into `(key, value)` pairs, keeping repeated keys in order.
fn fields<'k>(lines: &[&str], keys: &[&'k str]) -> Vec<(&'k str, String)> {
    let mut out: Vec<(&'k str, String)> = Vec::new();
    for line in lines {
        let matched = keys.iter().find_map(|k| {
            let trimmed = line.trim_start();
            let rest = trimmed.strip_prefix(k)?;
            let value = rest.strip_prefix(':')?;
            Some((*k, value.trim().to_string()))
        });
        match (matched, out.last_mut()) {
            (Some(pair), _) => out.push(pair),
            (None, Some((_, value))) => {
                if !value.is_empty() || !line.trim().is_empty() {
                    value.push('\n');
                    value.push_str(line.trim_end());
                }
            }
            (None, None) => {}
        }
    }
    for (_, value) in &mut out {
        let trimmed = value.trim_matches('\n').trim_end();
        *value = trimmed.to_string();
    }
    out
}

fn first<'a>(pairs: &'a [(&str, String)], key: &str) -> Option<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.as_str())
        .filter(|v| !v.is_empty())
}

/// Parses the first ```` ```action ```` block. Generates a fresh random action id.
pub fn parse_action(text: &str) -> Result<PlannedAction, ParseError> {
    parse_action_with_id(text, ActionId::random())
}

/// Same grammar as [`parse_action`] with a caller-chosen id.
pub fn parse_action_with_id(text: &str, action_id: ActionId) -> Result<PlannedAction, ParseError> {
    let block = fenced_block(text, "action").ok_or(ParseError::NoBlock("action"))?;
    let pairs = fields(&block, &["kind", "command", "rationale"]);
    let kind = match first(&pairs, "kind").ok_or(ParseError::MissingField("kind"))? {
        k if k.eq_ignore_ascii_case("shell") => ActionKind::Shell,
        k if k.eq_ignore_ascii_case("script") => ActionKind::Script,
        k if k.eq_ignore_ascii_case("conclude") => ActionKind::Conclude,
        other => return Err(ParseError::UnknownKind(other.to_string())),
    };
    let command = first(&pairs, "command").map(str::to_string);
    let rationale = first(&pairs, "rationale")
        .ok_or(ParseError::MissingField("rationale"))?
        .to_string();
    let command = match (kind, command) {
        (ActionKind::Conclude, Some(_)) => return Err(ParseError::UnexpectedField("command")),
        (ActionKind::Conclude, None) => None,
        (_, None) => return Err(ParseError::MissingField("command")),
        (_, Some(c)) => Some(c),
    };
    Ok(PlannedAction {
        action_id,
        kind,
        command,
        rationale,
    })
}

pub fn parse_verdict(text: &str) -> Result<EvalVerdict, ParseError> {
    let block = fenced_block(text, "verdict").ok_or(ParseError::NoBlock("verdict"))?;
    let pairs = fields(&block, &["status", "critique", "suggestion"]);
    let status = match first(&pairs, "status").ok_or(ParseError::MissingField("status"))? {
        s if s.eq_ignore_ascii_case("goal_achieved") => VerdictStatus::GoalAchieved,
        s if s.eq_ignore_ascii_case("progress") => VerdictStatus::Progress,
        s if s.eq_ignore_ascii_case("failure") => VerdictStatus::Failure,
        other => return Err(ParseError::UnknownStatus(other.to_string())),
    };
    let critique = first(&pairs, "critique")
        .ok_or(ParseError::MissingField("critique"))?
        .to_string();
    let suggestion = first(&pairs, "suggestion").map(str::to_string);
    Ok(EvalVerdict {
        status,
        critique,
        suggestion,
    })
}

/// Recorder output: an optional ```` ```summary ```` block (else the whole text),
/// with `finding:` lines pulled out as new findings.
pub fn parse_summary(text: &str) -> (String, Vec<String>) {
    let body: Vec<&str> = fenced_block(text, "summary").unwrap_or_else(|| text.lines().collect());
    let mut summary = Vec::new();
    let mut findings = Vec::new();
    for line in body {
        match line.trim_start().strip_prefix("finding:") {
            Some(f) if !f.trim().is_empty() => findings.push(f.trim().to_string()),
            Some(_) => {}
            None => summary.push(line.trim_end()),
        }
    }
    (summary.join("\n").trim().to_string(), findings)
}

/// Narrative section of a final report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportNarrative {
    pub outcome: String,
    pub findings: Vec<Finding>,
}

/// Parses a ```` ```report ```` block with an `outcome:` field and
/// `finding: <severity> | <name> | <evidence>` lines.
pub fn parse_report(text: &str) -> Result<ReportNarrative, ParseError> {
    let block = fenced_block(text, "report").ok_or(ParseError::NoBlock("report"))?;
    let pairs = fields(&block, &["outcome", "finding"]);
    let outcome = first(&pairs, "outcome")
        .ok_or(ParseError::MissingField("outcome"))?
        .to_string();
    let mut findings = Vec::new();
    for (_, line) in pairs.iter().filter(|(k, _)| *k == "finding") {
        let parts: Vec<&str> = line.splitn(3, '|').map(str::trim).collect();
        let [severity, name, evidence] = parts[..] else {
            return Err(ParseError::Malformed {
                field: "finding",
                reason: "expected `severity | name | evidence`".into(),
            });
        };
        let severity: Severity = severity
            .parse()
            .map_err(|_| ParseError::UnknownSeverity(severity.to_string()))?;
        if name.is_empty() {
            return Err(ParseError::Malformed {
                field: "finding",
                reason: "empty name".into(),
            });
        }
        findings.push(Finding {
            name: name.to_string(),
            severity,
            evidence: evidence.to_string(),
        });
    }
    Ok(ReportNarrative { outcome, findings })
}
