use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{BackendKind, ClientError, CompletionBackend, CompletionRequest};
use crate::messenger::hex_digest;

/// Stable replay key for a prompt.
pub fn prompt_sha256(prompt: &str) -> String {
    hex_digest(prompt.as_bytes())
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_sha256: String,
    pub response_text: String,
    pub model: String,
    pub temperature: f64,
}

/// Answers from a table of recorded responses keyed by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ClientError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses line-delimited JSON records. Blank lines are skipped; a later
    /// record for the same prompt replaces an earlier one.
    pub fn parse(text: &str) -> Result<Self, ClientError> {
        let mut responses = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(line)
                .map_err(|e| ClientError::Io(format!("replay line {}: {e}", lineno + 1)))?;
            responses.insert(rec.prompt_sha256, rec.response_text);
        }
        Ok(Self { responses })
    }

    /// Builds a table from raw `(prompt, response)` pairs.
    pub fn from_records<P: AsRef<str>, R: Into<String>>(
        pairs: impl IntoIterator<Item = (P, R)>,
    ) -> Self {
        Self {
            responses: pairs
                .into_iter()
                .map(|(p, r)| (prompt_sha256(p.as_ref()), r.into()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        let key = prompt_sha256(&req.prompt);
        self.responses
            .get(&key)
            .cloned()
            .ok_or(ClientError::ReplayMiss { prompt_sha256: key })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }
}

/// Wraps a live backend and captures every successful reply for later replay.
pub struct RecordingBackend {
    inner: Arc<dyn CompletionBackend>,
    records: Mutex<BTreeMap<String, ReplayRecord>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn CompletionBackend>) -> Self {
        Self {
            inner,
            records: Mutex::new(BTreeMap::new()),
        }
    }

    fn record(&self, req: &CompletionRequest, text: &str) {
        let key = prompt_sha256(&req.prompt);
        let rec = ReplayRecord {
            prompt_sha256: key.clone(),
            response_text: text.to_owned(),
            model: req.model.clone(),
            temperature: req.temperature,
        };
        self.records.lock().expect("recorder lock").insert(key, rec);
    }

    pub fn records(&self) -> Vec<ReplayRecord> {
        self.records
            .lock()
            .expect("recorder lock")
            .values()
            .cloned()
            .collect()
    }

    /// Writes the captured records as JSON lines, ordered by prompt hash.
    pub fn save(&self, path: &Path) -> Result<(), ClientError> {
        let io = |e: std::io::Error| ClientError::Io(format!("{}: {e}", path.display()));
        let mut file = fs::File::create(path).map_err(io)?;
        for rec in self.records() {
            let line = serde_json::to_string(&rec).map_err(|e| ClientError::Io(e.to_string()))?;
            writeln!(file, "{line}").map_err(io)?;
        }
        Ok(())
    }
}

impl CompletionBackend for RecordingBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        let text = self.inner.complete(req)?;
        self.record(req, &text);
        Ok(text)
    }

    fn complete_many(
        &self,
        reqs: &[CompletionRequest],
    ) -> Result<Vec<Result<String, ClientError>>, ClientError> {
        let replies = self.inner.complete_many(reqs)?;
        if replies.len() == reqs.len() {
            for (req, reply) in reqs.iter().zip(&replies) {
                if let Ok(text) = reply {
                    self.record(req, text);
                }
            }
        }
        Ok(replies)
    }

    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }
}
