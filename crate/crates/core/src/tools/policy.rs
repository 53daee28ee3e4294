use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roles::PlannedAction;

pub const DEFAULT_TIMEOUT_SECONDS: f64 = 60.0;
pub const DEFAULT_MAX_OUTPUT_BYTES: usize = 65_536;
pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny,
    RequireApproval,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Policy,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_pattern: Option<String>,
    pub decided_by: DecidedBy,
}

impl GateDecision {
    pub fn by_policy(decision: Decision, matched_pattern: Option<String>) -> Self {
        Self {
            decision,
            matched_pattern,
            decided_by: DecidedBy::Policy,
        }
    }

    pub fn by_human(approved: bool) -> Self {
        Self {
            decision: if approved { Decision::Approved } else { Decision::Rejected },
            matched_pattern: None,
            decided_by: DecidedBy::Human,
        }
    }

    pub fn permits_execution(&self) -> bool {
        matches!(self.decision, Decision::Allow | Decision::Approved)
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy {name}: {source}")]
    Parse {
        name: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("policy {name}: unsupported version {version}")]
    Version { name: String, version: u32 },
    #[error("policy {name}: pattern `{pattern}` does not compile: {reason}")]
    Pattern {
        name: String,
        pattern: String,
        reason: String,
    },
    #[error("policy {name}: {field} must be positive")]
    NonPositive { name: String, field: &'static str },
    #[error("policy {name}: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown policy `{0}`")]
    Unknown(String),
}

fn default_version() -> u32 {
    POLICY_FORMAT_VERSION
}
fn default_true() -> bool {
    true
}
fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_SECONDS
}
fn default_max_output() -> usize {
    DEFAULT_MAX_OUTPUT_BYTES
}

/// On-disk policy layout (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "default_true")]
    pub allow_by_default: bool,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default = "default_max_output")]
    pub max_output_bytes: usize,
    #[serde(default)]
    pub deny_patterns: Vec<String>,
    #[serde(default)]
    pub approval_patterns: Vec<String>,
}

impl Default for PolicyFile {
    fn default() -> Self {
        Self {
            version: POLICY_FORMAT_VERSION,
            allow_by_default: true,
            timeout_seconds: DEFAULT_TIMEOUT_SECONDS,
            max_output_bytes: DEFAULT_MAX_OUTPUT_BYTES,
            deny_patterns: Vec::new(),
            approval_patterns: Vec::new(),
        }
    }
}

/// A compiled, frozen safety policy.
#[derive(Debug, Clone)]
pub struct SafetyPolicy {
    pub name: String,
    deny: Vec<Regex>,
    approval: Vec<Regex>,
    pub allow_by_default: bool,
    pub timeout_seconds: f64,
    pub max_output_bytes: usize,
    source: PolicyFile,
}

impl SafetyPolicy {
    pub fn compile(name: impl Into<String>, file: PolicyFile) -> Result<Self, PolicyError> {
        let name = name.into();
        if file.version != POLICY_FORMAT_VERSION {
            return Err(PolicyError::Version {
                name,
                version: file.version,
            });
        }
        if !file.timeout_seconds.is_finite() || file.timeout_seconds <= 0.0 {
            return Err(PolicyError::NonPositive {
                name,
                field: "timeout_seconds",
            });
        }
        if file.max_output_bytes == 0 {
            return Err(PolicyError::NonPositive {
                name,
                field: "max_output_bytes",
            });
        }
        let compile = |patterns: &[String]| -> Result<Vec<Regex>, PolicyError> {
            patterns
                .iter()
                .map(|p| {
                    Regex::new(p).map_err(|e| PolicyError::Pattern {
                        name: name.clone(),
                        pattern: p.clone(),
                        reason: e.to_string(),
                    })
                })
                .collect()
        };
        Ok(Self {
            deny: compile(&file.deny_patterns)?,
            approval: compile(&file.approval_patterns)?,
            allow_by_default: file.allow_by_default,
            timeout_seconds: file.timeout_seconds,
            max_output_bytes: file.max_output_bytes,
            name,
            source: file,
        })
    }

    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, PolicyError> {
        let name = name.into();
        let file: PolicyFile = toml::from_str(text).map_err(|source| PolicyError::Parse {
            name: name.clone(),
            source,
        })?;
        Self::compile(name, file)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            name: name.clone(),
            source,
        })?;
        Self::parse(name, &text)
    }

    /// Allows everything, used by tests and trusted local runs.
    pub fn permissive() -> Self {
        Self::compile("permissive", PolicyFile::default()).expect("default policy compiles")
    }

    pub fn source(&self) -> &PolicyFile {
        &self.source
    }

    /// Serialized form, stored with each run so the policy stays frozen.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.source).expect("policy serializes")
    }
}

/// Deny beats approval beats the default.
pub fn check_policy(action: &PlannedAction, policy: &SafetyPolicy) -> GateDecision {
    check_command(action.command.as_deref().unwrap_or(""), policy)
}

pub fn check_command(command: &str, policy: &SafetyPolicy) -> GateDecision {
    if let Some(re) = policy.deny.iter().find(|re| re.is_match(command)) {
        return GateDecision::by_policy(Decision::Deny, Some(re.as_str().to_string()));
    }
    if let Some(re) = policy.approval.iter().find(|re| re.is_match(command)) {
        return GateDecision::by_policy(Decision::RequireApproval, Some(re.as_str().to_string()));
    }
    if policy.allow_by_default {
        GateDecision::by_policy(Decision::Allow, None)
    } else {
        GateDecision::by_policy(Decision::RequireApproval, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;
    use proptest::prelude::*;

    fn policy(deny: &[&str], approval: &[&str], allow_by_default: bool) -> SafetyPolicy {
        SafetyPolicy::compile(
            "t",
            PolicyFile {
                deny_patterns: deny.iter().map(|s| s.to_string()).collect(),
                approval_patterns: approval.iter().map(|s| s.to_string()).collect(),
                allow_by_default,
                ..PolicyFile::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn default_policy_denies_root_wipe() {
        let p = bundled::default_policy();
        let d = check_command("rm -rf /", &p);
        assert_eq!(d.decision, Decision::Deny);
        assert_eq!(d.matched_pattern.as_deref(), Some(r"rm\s+-rf\s+/"));
        assert_eq!(d.decided_by, DecidedBy::Policy);
    }

    #[test]
    fn default_policy_gates_exploit_framework() {
        let p = bundled::default_policy();
        let d = check_command("msfconsole -q -x 'use exploit/multi/samba/usermap_script'", &p);
        assert_eq!(d.decision, Decision::RequireApproval);
    }

    #[test]
    fn empty_policy_allows_by_default() {
        let p = policy(&[], &[], true);
        assert_eq!(check_command("nmap -sV 10.0.2.7", &p).decision, Decision::Allow);
        let p = policy(&[], &[], false);
        assert_eq!(check_command("nmap -sV 10.0.2.7", &p).decision, Decision::RequireApproval);
    }

    #[test]
    fn bad_pattern_rejected_at_load() {
        let err = SafetyPolicy::parse("bad", "deny_patterns = [\"(\"]").unwrap_err();
        assert!(matches!(err, PolicyError::Pattern { .. }));
        let err = SafetyPolicy::parse("bad", "version = 7").unwrap_err();
        assert!(matches!(err, PolicyError::Version { version: 7, .. }));
        let err = SafetyPolicy::parse("bad", "timeout_seconds = 0").unwrap_err();
        assert!(matches!(err, PolicyError::NonPositive { .. }));
    }

    #[test]
    fn policy_round_trips_through_toml() {
        let p = bundled::default_policy();
        let again = SafetyPolicy::parse("copy", &p.to_toml()).unwrap();
        assert_eq!(again.source(), p.source());
    }

    proptest! {
        #[test]
        fn precedence_is_deny_then_approval_then_default(
            words in proptest::collection::vec("[a-e]{1,2}", 1..6),
            deny in proptest::collection::vec("[a-e]{1,2}", 0..3),
            approval in proptest::collection::vec("[a-e]{1,2}", 0..3),
            allow in any::<bool>(),
        ) {
            let command = words.join(" ");
            let deny_refs: Vec<&str> = deny.iter().map(String::as_str).collect();
            let approval_refs: Vec<&str> = approval.iter().map(String::as_str).collect();
            let p = policy(&deny_refs, &approval_refs, allow);
            let d = check_command(&command, &p);
            let expected = if deny.iter().any(|x| command.contains(x.as_str())) {
                Decision::Deny
            } else if approval.iter().any(|x| command.contains(x.as_str())) || !allow {
                Decision::RequireApproval
            } else {
                Decision::Allow
            };
            prop_assert_eq!(d.decision, expected);
            prop_assert_eq!(check_command(&command, &p), d);
        }
    }
}
