//! Completion backends: a remote OpenAI-compatible chat endpoint, a
//! deterministic mock, and replay of recorded responses.
//!
//! Every request is self-contained. No backend keeps conversation state, so
//! the same prompt always yields the same reply from mock and replay.

mod mock;
mod remote;
mod replay;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messenger::NodeTask;

pub use mock::{mock_predict, MockBackend};
pub use remote::{HttpReply, Limiter, RemoteBackend, Transport, TransportError, UreqTransport};
pub use replay::{prompt_sha256, RecordingBackend, ReplayBackend, ReplayRecord};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_CREDENTIAL_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("credential environment variable {var} is not set")]
    MissingCredential { var: String },
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion reply: {0}")]
    MalformedReply(String),
    #[error("no recorded response for prompt {prompt_sha256}")]
    ReplayMiss { prompt_sha256: String },
    #[error("batch returned {got} responses for {expected} requests")]
    CountMismatch { expected: usize, got: usize },
    #[error("I/O: {0}")]
    Io(String),
}

/// One stateless completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_id: String,
    /// Structured form of the prompt's inputs. Only the mock backend reads it;
    /// it never goes over the wire.
    #[serde(skip)]
    pub task: Option<NodeTask>,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError>;

    /// Sends several requests at once. The outer error fails the whole batch;
    /// the returned list may have a different length than `reqs`.
    fn complete_many(
        &self,
        reqs: &[CompletionRequest],
    ) -> Result<Vec<Result<String, ClientError>>, ClientError> {
        Ok(reqs.iter().map(|r| self.complete(r)).collect())
    }

    fn kind(&self) -> BackendKind;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Remote,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored here.
    pub credential_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub mock_alpha: f64,
    pub replay_file: Option<PathBuf>,
    pub batch: bool,
    pub backoff_base_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: DEFAULT_ENDPOINT.to_owned(),
            credential_env: DEFAULT_CREDENTIAL_ENV.to_owned(),
            timeout_secs: 60.0,
            max_retries: 5,
            max_in_flight: 8,
            mock_alpha: 0.5,
            replay_file: None,
            batch: false,
            backoff_base_ms: 500,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(0.0..=1.0).contains(&self.mock_alpha) {
            return Err(ClientError::Config(format!(
                "mock alpha {} must lie in [0, 1]",
                self.mock_alpha
            )));
        }
        if self.max_in_flight == 0 {
            return Err(ClientError::Config(
                "max_in_flight must be at least 1".into(),
            ));
        }
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint.is_empty() {
                    return Err(ClientError::Config(
                        "remote backend needs an endpoint".into(),
                    ));
                }
                if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
                    return Err(ClientError::Config("timeout must be positive".into()));
                }
                self.credential()?;
            }
            BackendKind::Replay if self.replay_file.is_none() => {
                return Err(ClientError::Config(
                    "replay backend needs a record file".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Reads the API key from the configured environment variable.
    pub fn credential(&self) -> Result<String, ClientError> {
        match std::env::var(&self.credential_env) {
            Ok(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(ClientError::MissingCredential {
                var: self.credential_env.clone(),
            }),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Builds the backend described by `cfg`.
pub fn build_backend(cfg: &BackendConfig) -> Result<Arc<dyn CompletionBackend>, ClientError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Mock => Arc::new(MockBackend::new(cfg.mock_alpha)),
        BackendKind::Replay => {
            let path = cfg.replay_file.as_ref().expect("validated");
            Arc::new(ReplayBackend::load(path)?)
        }
        BackendKind::Remote => Arc::new(RemoteBackend::new(
            cfg,
            Arc::new(UreqTransport::new(cfg.timeout())),
        )?),
    })
}

/// Sends a batch and enforces the one-reply-per-request contract.
///
/// When the backend answers with a different number of replies, every item
/// fails with [`ClientError::CountMismatch`]; replies are never realigned.
pub fn batch_complete(
    reqs: &[CompletionRequest],
    backend: &dyn CompletionBackend,
    batching_enabled: bool,
) -> Result<Vec<Result<String, ClientError>>, ClientError> {
    if !batching_enabled {
        return Err(ClientError::Config(
            "batched completion requested but batching is disabled".into(),
        ));
    }
    if reqs.is_empty() {
        return Ok(Vec::new());
    }
    let replies = match backend.complete_many(reqs) {
        Ok(r) => r,
        Err(e) => return Ok(vec![Err(e); reqs.len()]),
    };
    if replies.len() != reqs.len() {
        log::warn!(
            "batch count mismatch: {} requests, {} replies; failing the whole batch",
            reqs.len(),
            replies.len()
        );
        let err = ClientError::CountMismatch {
            expected: reqs.len(),
            got: replies.len(),
        };
        return Ok(vec![Err(err); reqs.len()]);
    }
    Ok(replies)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct ShortBatch;

    impl CompletionBackend for ShortBatch {
        fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
            Ok(req.request_id.clone())
        }

        fn complete_many(
            &self,
            reqs: &[CompletionRequest],
        ) -> Result<Vec<Result<String, ClientError>>, ClientError> {
            Ok(reqs.iter().skip(1).map(|r| self.complete(r)).collect())
        }

        fn kind(&self) -> BackendKind {
            BackendKind::Mock
        }
    }

    fn reqs(n: usize) -> Vec<CompletionRequest> {
        (0..n)
            .map(|i| CompletionRequest {
                prompt: format!("p{i}"),
                model: "m".into(),
                temperature: 0.0,
                max_tokens: 16,
                request_id: format!("r{i}"),
                task: None,
            })
            .collect()
    }

    #[test]
    fn batch_in_order_when_counts_match() {
        let backend =
            ReplayBackend::from_records((0..5).map(|i| (format!("p{i}"), format!("{i}.5"))));
        let out = batch_complete(&reqs(5), &backend, true).unwrap();
        let texts: Vec<String> = out.into_iter().map(Result::unwrap).collect();
        assert_eq!(texts, vec!["0.5", "1.5", "2.5", "3.5", "4.5"]);
    }

    #[test]
    fn batch_count_mismatch_fails_every_item() {
        let out = batch_complete(&reqs(5), &ShortBatch, true).unwrap();
        assert_eq!(out.len(), 5);
        for item in out {
            assert_eq!(
                item,
                Err(ClientError::CountMismatch {
                    expected: 5,
                    got: 4
                })
            );
        }
    }

    #[test]
    fn batch_rejected_when_disabled() {
        assert!(matches!(
            batch_complete(&reqs(2), &ShortBatch, false),
            Err(ClientError::Config(_))
        ));
    }

    #[test]
    fn config_validation() {
        let cfg = BackendConfig {
            kind: BackendKind::Replay,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ClientError::Config(_))));

        let cfg = BackendConfig {
            kind: BackendKind::Remote,
            credential_env: "GRAPHFILL_TEST_SURELY_UNSET_VAR".into(),
            ..Default::default()
        };
        assert_eq!(
            cfg.validate(),
            Err(ClientError::MissingCredential {
                var: "GRAPHFILL_TEST_SURELY_UNSET_VAR".into()
            })
        );

        let cfg = BackendConfig {
            mock_alpha: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(BackendConfig::default().validate().is_ok());
    }
}
