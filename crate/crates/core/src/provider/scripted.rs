use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResponse, ConfigError, Provider, ProviderError};

/// One fixture line: the response returned for call `index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub index: usize,
    /// The outgoing prompt must contain this text, or the call fails loudly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_substring: Option<String>,
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl ScriptRecord {
    pub fn new(index: usize, content: impl Into<String>, prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            index,
            expect_substring: None,
            content: content.into(),
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn expecting(mut self, substring: impl Into<String>) -> Self {
        self.expect_substring = Some(substring.into());
        self
    }
}

/// Parses a JSONL fixture. Records must be listed in index order starting at 0.
pub fn parse_fixture(label: &str, text: &str) -> Result<Vec<ScriptRecord>, ConfigError> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ScriptRecord = serde_json::from_str(line).map_err(|e| ConfigError::BadFixture {
            path: label.to_string(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        if record.index != records.len() {
            return Err(ConfigError::BadFixture {
                path: label.to_string(),
                line: lineno + 1,
                reason: format!("expected index {}, found {}", records.len(), record.index),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Deterministic provider that replays fixture records by call index.
#[derive(Debug)]
pub struct ScriptedProvider {
    records: Vec<ScriptRecord>,
    next: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new(records: Vec<ScriptRecord>) -> Self {
        Self {
            records,
            next: AtomicUsize::new(0),
        }
    }

    pub fn starting_at(self, index: usize) -> Self {
        self.next.store(index, Ordering::SeqCst);
        self
    }

    pub fn calls_made(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }

    pub fn records(&self) -> &[ScriptRecord] {
        &self.records
    }
}

impl Provider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, ProviderError> {
        req.validate()?;
        let index = self.next.fetch_add(1, Ordering::SeqCst);
        let record = self
            .records
            .get(index)
            .ok_or_else(|| ProviderError::backend("script exhausted"))?;
        if let Some(expected) = &record.expect_substring {
            if !req.prompt_text().contains(expected.as_str()) {
                return Err(ProviderError::ScriptMismatch {
                    index,
                    reason: format!("prompt does not contain {expected:?}"),
                });
            }
        }
        Ok(CompletionResponse {
            content: record.content.clone(),
            prompt_tokens: record.prompt_tokens,
            completion_tokens: record.completion_tokens,
            provider_name: self.name().to_string(),
            estimated: false,
        })
    }

    fn projected_usage(&self, _req: &CompletionRequest) -> Option<u64> {
        self.records
            .get(self.next.load(Ordering::SeqCst))
            .map(|r| r.prompt_tokens + r.completion_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::Message;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::new(vec![Message::system("sys"), Message::user(text)])
    }

    #[test]
    fn replays_by_call_index() {
        let p = ScriptedProvider::new(vec![
            ScriptRecord::new(0, "zero", 10, 2),
            ScriptRecord::new(1, "one", 20, 3),
        ]);
        let r0 = p.complete(&req("a")).unwrap();
        assert_eq!(r0.content, "zero");
        assert_eq!((r0.prompt_tokens, r0.completion_tokens), (10, 2));
        assert_eq!(p.complete(&req("b")).unwrap().content, "one");
    }

    #[test]
    fn exhausted_script_is_backend_error() {
        let p = ScriptedProvider::new(vec![ScriptRecord::new(0, "only", 1, 1)]);
        p.complete(&req("a")).unwrap();
        let err = p.complete(&req("a")).unwrap_err();
        assert_eq!(err, ProviderError::backend("script exhausted"));
    }

    #[test]
    fn substring_mismatch_fails_loudly() {
        let p = ScriptedProvider::new(vec![ScriptRecord::new(0, "x", 1, 1).expecting("nmap")]);
        let err = p.complete(&req("whoami")).unwrap_err();
        assert!(matches!(err, ProviderError::ScriptMismatch { index: 0, .. }));
    }

    #[test]
    fn projected_usage_reads_next_record() {
        let p = ScriptedProvider::new(vec![ScriptRecord::new(0, "x", 400, 100)]);
        assert_eq!(p.projected_usage(&req("a")), Some(500));
        p.complete(&req("a")).unwrap();
        assert_eq!(p.projected_usage(&req("a")), None);
    }

    #[test]
    fn identical_script_and_calls_are_deterministic() {
        let records = vec![ScriptRecord::new(0, "a", 1, 2), ScriptRecord::new(1, "b", 3, 4)];
        let run = || {
            let p = ScriptedProvider::new(records.clone());
            (0..2).map(|_| p.complete(&req("q")).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fixture_indices_must_be_contiguous() {
        let text = r#"{"index":0,"content":"a","prompt_tokens":1,"completion_tokens":1}
{"index":2,"content":"b","prompt_tokens":1,"completion_tokens":1}"#;
        let err = parse_fixture("t", text).unwrap_err();
        assert!(matches!(err, ConfigError::BadFixture { line: 2, .. }));
    }
}
