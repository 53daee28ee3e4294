use std::sync::Arc;

use super::{Privilege, Scenario};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOutput {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl SimOutput {
    fn ok(stdout: impl Into<String>) -> Self {
        Self {
            exit_code: 0,
            stdout: stdout.into(),
            stderr: String::new(),
        }
    }
}

const SCAN_TOOLS: [&str; 3] = ["nmap", "masscan", "rustscan"];

/// Mutable state of one simulated host.
#[derive(Debug, Clone)]
pub struct TargetState {
    scenario: Arc<Scenario>,
    progress: usize,
    privilege: Privilege,
    flag_read: bool,
}

impl TargetState {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        Self {
            scenario,
            progress: 0,
            privilege: Privilege::None,
            flag_read: false,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn progress(&self) -> usize {
        self.progress
    }

    pub fn privilege(&self) -> Privilege {
        self.privilege
    }

    pub fn is_compromised(&self) -> bool {
        self.privilege == Privilege::Root
    }

    pub fn flag_read(&self) -> bool {
        self.flag_read
    }

    fn is_scan(&self, command: &str) -> bool {
        let mut words = command.split_whitespace();
        let Some(first) = words.next() else {
            return false;
        };
        let tool = first.rsplit('/').next().unwrap_or(first);
        let host = self.scenario.host();
        let targets_host = command.split_whitespace().any(|w| w == host || w.starts_with(&format!("{host}/")));
        if !targets_host {
            return false;
        }
        SCAN_TOOLS.contains(&tool) || (tool == "nc" && command.split_whitespace().any(|w| w == "-z" || w == "-zv" || w == "-vz"))
    }

    /// Reacts to one simple command. Only the next step of the chain advances the
    /// target; everything else is a scan, a flag read, or has no effect.
    pub fn handle_command(&mut self, command: &str) -> SimOutput {
        let command = command.trim();
        if let Some(step) = self.scenario.chain.get(self.progress) {
            if step.pattern.is_match(command) {
                self.progress += 1;
                self.privilege = self.privilege.max(step.spec.grants);
                let mut out = String::new();
                if step.spec.show_services {
                    out.push_str(&self.scenario.service_table());
                }
                out.push_str(&step.spec.response);
                if !out.ends_with('\n') {
                    out.push('\n');
                }
                return SimOutput::ok(out);
            }
        }
        if self.is_scan(command) {
            return SimOutput::ok(self.scenario.service_table());
        }
        if self.scenario.flag_pattern.is_match(command) {
            if self.privilege == Privilege::Root {
                self.flag_read = true;
                return SimOutput::ok(format!("{}\n", self.scenario.file.flag));
            }
            return SimOutput {
                exit_code: 1,
                stdout: String::new(),
                stderr: "Permission denied\n".into(),
            };
        }
        SimOutput {
            exit_code: 1,
            stdout: String::new(),
            stderr: "command had no effect\n".into(),
        }
    }
}
