//! Scenarios, fixtures and the default policy compiled into the binary.

use std::path::Path;
use std::sync::Arc;

use crate::provider::{parse_fixture, ConfigError, ScriptRecord};
use crate::sim::{Scenario, ScenarioError};
use crate::tools::SafetyPolicy;

pub const DEFAULT_POLICY_NAME: &str = "default";
pub const DEFAULT_POLICY_TOML: &str = include_str!("../policies/default.toml");

pub const SCENARIOS: &[(&str, &str)] = &[
    ("vsftpd-backdoor", include_str!("../scenarios/vsftpd-backdoor.toml")),
    ("samba-usermap", include_str!("../scenarios/samba-usermap.toml")),
    ("distcc-privesc", include_str!("../scenarios/distcc-privesc.toml")),
];

pub const FIXTURES: &[(&str, &str)] = &[
    ("vsftpd-backdoor", include_str!("../fixtures/vsftpd-backdoor.jsonl")),
    ("vsftpd-budget", include_str!("../fixtures/vsftpd-budget.jsonl")),
    ("samba-usermap", include_str!("../fixtures/samba-usermap.jsonl")),
    ("samba-usermap-reject", include_str!("../fixtures/samba-usermap-reject.jsonl")),
    ("distcc-privesc", include_str!("../fixtures/distcc-privesc.jsonl")),
];

pub fn default_policy() -> SafetyPolicy {
    SafetyPolicy::parse(DEFAULT_POLICY_NAME, DEFAULT_POLICY_TOML).expect("bundled policy is valid")
}

/// Loads a policy by bundled name or file path.
pub fn load_policy(name_or_path: &str) -> Result<SafetyPolicy, crate::tools::PolicyError> {
    if name_or_path == DEFAULT_POLICY_NAME {
        return Ok(default_policy());
    }
    if name_or_path == "permissive" {
        return Ok(SafetyPolicy::permissive());
    }
    SafetyPolicy::load(Path::new(name_or_path))
}

/// Loads fixture records by bundled name or file path.
pub fn load_fixture(name_or_path: &str) -> Result<Vec<ScriptRecord>, ConfigError> {
    if let Some((name, text)) = FIXTURES.iter().find(|(n, _)| *n == name_or_path) {
        return parse_fixture(name, text);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::BadFixture {
            path: name_or_path.to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
        return parse_fixture(name_or_path, &text);
    }
    Err(ConfigError::UnknownFixture(name_or_path.to_string()))
}

/// Loads a scenario by bundled name or file path.
pub fn load_scenario(name_or_path: &str) -> Result<Arc<Scenario>, ScenarioError> {
    if let Some((_, text)) = SCENARIOS.iter().find(|(n, _)| *n == name_or_path) {
        return Scenario::parse(text).map(Arc::new);
    }
    let path = Path::new(name_or_path);
    if path.is_file() {
        return Scenario::load(path).map(Arc::new);
    }
    Err(ScenarioError::Unknown(name_or_path.to_string()))
}

pub fn scenario_names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|(n, _)| *n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_assets_are_valid() {
        default_policy();
        for (name, _) in SCENARIOS {
            let s = load_scenario(name).unwrap();
            assert_eq!(s.name(), *name);
        }
        for (name, _) in FIXTURES {
            assert!(!load_fixture(name).unwrap().is_empty(), "{name}");
        }
    }

    #[test]
    fn unknown_names_are_errors() {
        assert!(matches!(load_fixture("nope"), Err(ConfigError::UnknownFixture(_))));
        assert!(matches!(load_scenario("nope"), Err(ScenarioError::Unknown(_))));
    }
}
