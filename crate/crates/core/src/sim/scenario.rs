use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Privilege {
    #[default]
    None,
    User,
    Root,
}

impl Privilege {
    pub fn as_str(&self) -> &'static str {
        match self {
            Privilege::None => "none",
            Privilege::User => "user",
            Privilege::Root => "root",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Service {
    pub port: u16,
    #[serde(default = "default_protocol")]
    pub protocol: String,
    pub name: String,
    pub version: String,
    #[serde(default)]
    pub banner: Option<String>,
}

fn default_protocol() -> String {
    "tcp".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStepSpec {
    pub id: String,
    /// Regex matched against one simple command.
    pub pattern: String,
    /// A command that satisfies `pattern`; used by validation and by tests.
    pub example: String,
    #[serde(default)]
    pub grants: Privilege,
    pub response: String,
    /// Prefix the response with the service table.
    #[serde(default)]
    pub show_services: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub description: String,
    pub host: String,
    #[serde(default)]
    pub goal: Option<String>,
    pub flag: String,
    pub flag_command: String,
    #[serde(default)]
    pub flag_example: Option<String>,
    pub services: Vec<Service>,
    pub chain: Vec<ChainStepSpec>,
}

#[derive(Debug, Clone)]
pub struct ChainStep {
    pub spec: ChainStepSpec,
    pub pattern: Regex,
}

/// A validated scenario: one simulated host and its single exploitation chain.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub chain: Vec<ChainStep>,
    pub flag_pattern: Regex,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("cannot read scenario {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown scenario `{0}`")]
    Unknown(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

fn compile(field: String, pattern: &str) -> Result<Regex, ScenarioError> {
    Regex::new(pattern).map_err(|e| invalid(field, e.to_string()))
}

/// Line number (1-based) of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        Self::validate(file)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn validate(file: ScenarioFile) -> Result<Self, ScenarioError> {
        if file.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if file.host.trim().is_empty() || file.host.contains(char::is_whitespace) {
            return Err(invalid("host", "must be a single non-empty token"));
        }
        if file.flag.trim().len() < 8 {
            return Err(invalid("flag", "must be at least 8 characters"));
        }
        if file.services.is_empty() {
            return Err(invalid("services", "at least one service is required"));
        }
        if file.chain.is_empty() {
            return Err(invalid("chain", "at least one step is required"));
        }
        let mut chain = Vec::with_capacity(file.chain.len());
        let mut best = Privilege::None;
        for (i, spec) in file.chain.iter().enumerate() {
            let pattern = compile(format!("chain[{i}].pattern"), &spec.pattern)?;
            if !pattern.is_match(&spec.example) {
                return Err(invalid(
                    format!("chain[{i}].example"),
                    "does not match the step pattern",
                ));
            }
            if spec.response.contains(&file.flag) {
                return Err(invalid(format!("chain[{i}].response"), "must not contain the flag"));
            }
            best = best.max(spec.grants);
            chain.push(ChainStep {
                spec: spec.clone(),
                pattern,
            });
        }
        if best != Privilege::Root {
            return Err(invalid("chain", "no step grants root"));
        }
        for (i, s) in file.services.iter().enumerate() {
            if s.banner.as_deref().is_some_and(|b| b.contains(&file.flag)) {
                return Err(invalid(format!("services[{i}].banner"), "must not contain the flag"));
            }
        }
        if file.description.contains(&file.flag) {
            return Err(invalid("description", "must not contain the flag"));
        }
        let flag_pattern = compile("flag_command".into(), &file.flag_command)?;
        if let Some(example) = &file.flag_example {
            if !flag_pattern.is_match(example) {
                return Err(invalid("flag_example", "does not match flag_command"));
            }
        }
        Ok(Self {
            file,
            chain,
            flag_pattern,
        })
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn host(&self) -> &str {
        &self.file.host
    }

    pub fn goal(&self) -> String {
        self.file
            .goal
            .clone()
            .unwrap_or_else(|| format!("Obtain root access on {}", self.file.host))
    }

    /// Operator-facing target description; never includes the flag.
    pub fn target_description(&self) -> String {
        format!("{} ({}): {}", self.file.host, self.file.name, self.file.description)
    }

    /// Every example command the scenario knows about, used as a search alphabet.
    pub fn example_commands(&self) -> Vec<String> {
        let mut out: Vec<String> = self.chain.iter().map(|s| s.spec.example.clone()).collect();
        out.push(format!("nmap -p- {}", self.file.host));
        out.extend(self.file.flag_example.clone());
        out
    }

    pub fn service_table(&self) -> String {
        let mut out = format!("Nmap scan report for {}\nPORT      STATE SERVICE  VERSION\n", self.file.host);
        for s in &self.file.services {
            let port = format!("{}/{}", s.port, s.protocol);
            out.push_str(&format!("{port:<9} open  {:<8} {}\n", s.name, s.version));
        }
        out
    }
}
