use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::json;

use super::{BackendConfig, BackendKind, ClientError, CompletionBackend, CompletionRequest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connect(String),
    Other(String),
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Timeout => f.write_str("request timed out"),
            TransportError::Connect(m) => write!(f, "connection failed: {m}"),
            TransportError::Other(m) => f.write_str(m),
        }
    }
}

/// Moves one JSON POST over the wire.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> Result<HttpReply, TransportError>;
}

/// Blocking HTTPS transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> Result<HttpReply, TransportError> {
        let resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {bearer}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => TransportError::Timeout,
                ureq::Error::Io(io) => TransportError::Connect(io.to_string()),
                ureq::Error::HostNotFound | ureq::Error::ConnectionFailed => {
                    TransportError::Connect(e.to_string())
                }
                other => TransportError::Other(other.to_string()),
            })?;
        let status = resp.status().as_u16();
        let body = resp
            .into_body()
            .read_to_string()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Counting semaphore capping concurrent in-flight requests.
#[derive(Debug)]
pub struct Limiter {
    capacity: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("limiter lock");
        while *used >= self.capacity {
            used = self.freed.wait(used).expect("limiter lock");
        }
        *used += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.used.lock().expect("limiter lock") -= 1;
        self.limiter.freed.notify_one();
    }
}

enum Attempt {
    Done(Result<String, ClientError>),
    Transient(String),
}

/// OpenAI-compatible chat-completions client.
///
/// Each call carries a single user message and nothing else. Timeouts,
/// connection failures, 429 and 5xx are retried with exponential backoff;
/// the in-flight permit is released before sleeping.
pub struct RemoteBackend {
    endpoint: String,
    api_key: String,
    transport: Arc<dyn Transport>,
    limiter: Limiter,
    max_retries: u32,
    backoff_base: Duration,
    retries: AtomicU64,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"<redacted>")
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

const MAX_BACKOFF: Duration = Duration::from_secs(60);

impl RemoteBackend {
    pub fn new(cfg: &BackendConfig, transport: Arc<dyn Transport>) -> Result<Self, ClientError> {
        let api_key = cfg.credential()?;
        Ok(Self {
            endpoint: cfg.endpoint.clone(),
            api_key,
            transport,
            limiter: Limiter::new(cfg.max_in_flight),
            max_retries: cfg.max_retries,
            backoff_base: Duration::from_millis(cfg.backoff_base_ms),
            retries: AtomicU64::new(0),
        })
    }

    /// Total retries performed so far.
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX))
            .min(MAX_BACKOFF)
    }

    fn request_body(req: &CompletionRequest, content: &str) -> String {
        json!({
            "model": req.model,
            "messages": [{ "role": "user", "content": content }],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        })
        .to_string()
    }

    fn attempt(&self, body: &str) -> Attempt {
        let reply = {
            let _permit = self.limiter.acquire();
            self.transport
                .post_json(&self.endpoint, &self.api_key, body)
        };
        match reply {
            Err(e) => Attempt::Transient(e.to_string()),
            Ok(r) if r.status == 429 || (500..600).contains(&r.status) => {
                Attempt::Transient(format!("HTTP {}", r.status))
            }
            Ok(r) if (200..300).contains(&r.status) => Attempt::Done(extract_content(&r.body)),
            Ok(r) => Attempt::Done(Err(ClientError::Http {
                status: r.status,
                body: r.body.chars().take(500).collect(),
            })),
        }
    }

    fn send(&self, req: &CompletionRequest, content: &str) -> Result<String, ClientError> {
        let body = Self::request_body(req, content);
        let mut attempt = 0u32;
        loop {
            match self.attempt(&body) {
                Attempt::Done(result) => {
                    if attempt > 0 {
                        log::info!(
                            "request {} succeeded after {attempt} retries",
                            req.request_id
                        );
                    }
                    return result;
                }
                Attempt::Transient(reason) if attempt < self.max_retries => {
                    let wait = self.backoff(attempt);
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!(
                        "request {}: {reason}; retry {attempt}/{} in {wait:?}",
                        req.request_id,
                        self.max_retries
                    );
                    std::thread::sleep(wait);
                }
                Attempt::Transient(reason) => {
                    return Err(ClientError::BackendUnavailable {
                        attempts: attempt + 1,
                        last: reason,
                    })
                }
            }
        }
    }
}

fn extract_content(body: &str) -> Result<String, ClientError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ClientError::MalformedReply(e.to_string()))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| ClientError::MalformedReply("missing choices[0].message.content".into()))
}

/// Packs several prompts into one message asking for one line per task.
fn batch_prompt(reqs: &[CompletionRequest]) -> String {
    let mut out = format!(
        "Below are {} independent tasks. Answer each with a single decimal number on its own line, \
         in task order, with no other text.\n",
        reqs.len()
    );
    for (i, r) in reqs.iter().enumerate() {
        out.push_str(&format!("\n### Task {}\n{}\n", i + 1, r.prompt));
    }
    out
}

impl CompletionBackend for RemoteBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        self.send(req, &req.prompt)
    }

    fn complete_many(
        &self,
        reqs: &[CompletionRequest],
    ) -> Result<Vec<Result<String, ClientError>>, ClientError> {
        let Some(first) = reqs.first() else {
            return Ok(Vec::new());
        };
        let mut carrier = first.clone();
        carrier.max_tokens = first.max_tokens.saturating_mul(reqs.len() as u32);
        let text = self.send(&carrier, &batch_prompt(reqs))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| Ok(l.to_owned()))
            .collect())
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    const ENV: &str = "GRAPHFILL_REMOTE_UNIT_TEST_KEY";

    fn cfg(max_retries: u32, max_in_flight: usize) -> BackendConfig {
        std::env::set_var(ENV, "sk-test-secret");
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint: "http://fake/v1/chat/completions".into(),
            credential_env: ENV.into(),
            max_retries,
            max_in_flight,
            backoff_base_ms: 1,
            ..Default::default()
        }
    }

    fn ok_body(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    fn req() -> CompletionRequest {
        CompletionRequest {
            prompt: "predict".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: 16,
            request_id: "r0".into(),
            task: None,
        }
    }

    /// Replays a fixed sequence of statuses, then 200s.
    struct Scripted {
        statuses: Mutex<Vec<u16>>,
        calls: AtomicUsize,
        bodies: Mutex<Vec<(String, String)>>,
    }

    impl Scripted {
        fn new(statuses: &[u16]) -> Self {
            Self {
                statuses: Mutex::new(statuses.iter().rev().copied().collect()),
                calls: AtomicUsize::new(0),
                bodies: Mutex::new(Vec::new()),
            }
        }
    }

    impl Transport for Scripted {
        fn post_json(
            &self,
            _url: &str,
            bearer: &str,
            body: &str,
        ) -> Result<HttpReply, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.bodies
                .lock()
                .unwrap()
                .push((bearer.to_owned(), body.to_owned()));
            let status = self.statuses.lock().unwrap().pop().unwrap_or(200);
            if status == 0 {
                return Err(TransportError::Timeout);
            }
            let body = if status == 200 {
                ok_body(" 4.5 ")
            } else {
                "busy".into()
            };
            Ok(HttpReply { status, body })
        }
    }

    #[test]
    fn retries_429_then_succeeds() {
        let transport = Arc::new(Scripted::new(&[429, 429]));
        let backend = RemoteBackend::new(&cfg(3, 2), transport.clone()).unwrap();
        assert_eq!(backend.complete(&req()).unwrap(), " 4.5 ");
        assert_eq!(transport.calls.load(Ordering::SeqCst), 3);
        assert_eq!(backend.retry_count(), 2);
    }

    #[test]
    fn retries_timeouts_and_5xx() {
        let transport = Arc::new(Scripted::new(&[0, 503]));
        let backend = RemoteBackend::new(&cfg(2, 2), transport.clone()).unwrap();
        assert!(backend.complete(&req()).is_ok());
        assert_eq!(transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_are_backend_unavailable() {
        let transport = Arc::new(Scripted::new(&[500, 500, 500, 500]));
        let backend = RemoteBackend::new(&cfg(2, 2), transport.clone()).unwrap();
        assert_eq!(
            backend.complete(&req()),
            Err(ClientError::BackendUnavailable {
                attempts: 3,
                last: "HTTP 500".into()
            })
        );
        assert_eq!(transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let transport = Arc::new(Scripted::new(&[401]));
        let backend = RemoteBackend::new(&cfg(5, 2), transport.clone()).unwrap();
        assert!(matches!(
            backend.complete(&req()),
            Err(ClientError::Http { status: 401, .. })
        ));
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn wire_format_is_single_stateless_message() {
        let transport = Arc::new(Scripted::new(&[]));
        let backend = RemoteBackend::new(&cfg(0, 1), transport.clone()).unwrap();
        backend.complete(&req()).unwrap();
        backend.complete(&req()).unwrap();
        let bodies = transport.bodies.lock().unwrap();
        assert_eq!(bodies[0], bodies[1]);
        let (bearer, body) = &bodies[0];
        assert_eq!(bearer, "sk-test-secret");
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["model"], "gpt-3.5-turbo");
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["max_tokens"], 16);
        let msgs = v["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0]["role"], "user");
        assert_eq!(msgs[0]["content"], "predict");
    }

    #[test]
    fn debug_output_hides_the_key() {
        let backend = RemoteBackend::new(&cfg(0, 1), Arc::new(Scripted::new(&[]))).unwrap();
        let dbg = format!("{backend:?}");
        assert!(!dbg.contains("sk-test-secret"));
        assert!(dbg.contains("redacted"));
    }

    #[test]
    fn malformed_reply() {
        assert!(matches!(
            extract_content("{}"),
            Err(ClientError::MalformedReply(_))
        ));
        assert_eq!(extract_content(&ok_body("1")).unwrap(), "1");
    }

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Transport for Slow {
        fn post_json(&self, _: &str, _: &str, _: &str) -> Result<HttpReply, TransportError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(HttpReply {
                status: 200,
                body: ok_body("1"),
            })
        }
    }

    #[test]
    fn in_flight_cap_is_respected() {
        let transport = Arc::new(Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let backend = RemoteBackend::new(&cfg(0, 3), transport.clone()).unwrap();
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| backend.complete(&req()).unwrap());
            }
        });
        let peak = transport.peak.load(Ordering::SeqCst);
        assert!(peak <= 3, "peak {peak}");
        assert!(peak >= 2);
    }

    #[test]
    fn batch_splits_reply_lines() {
        struct Lines;
        impl Transport for Lines {
            fn post_json(&self, _: &str, _: &str, body: &str) -> Result<HttpReply, TransportError> {
                assert!(body.contains("### Task 3"));
                Ok(HttpReply {
                    status: 200,
                    body: ok_body("1.0\n\n2.0\n"),
                })
            }
        }
        let backend = RemoteBackend::new(&cfg(0, 1), Arc::new(Lines)).unwrap();
        let reqs = vec![req(), req(), req()];
        let out = backend.complete_many(&reqs).unwrap();
        assert_eq!(out, vec![Ok("1.0".to_owned()), Ok("2.0".to_owned())]);
    }
}
