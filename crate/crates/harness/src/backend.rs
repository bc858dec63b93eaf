//! Model backends: deterministic stubs and an HTTP client with retry,
//! exponential backoff and a cap on in-flight requests.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use gvqa_core::inference::{stub_answer, InferenceRequest, InferenceResponse, StubError, StubMode};
use gvqa_core::model::QaNode;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no answer after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Stub(#[from] StubError),
}

pub trait Backend: Send + Sync {
    fn id(&self) -> String;
    /// `node` is the QA node the request was assembled for; remote backends
    /// only read the request.
    fn query(&self, request: &InferenceRequest, node: &QaNode) -> Result<InferenceResponse, BackendError>;
}

pub struct StubBackend {
    pub mode: StubMode,
}

impl Backend for StubBackend {
    fn id(&self) -> String {
        format!("stub:{}", self.mode)
    }

    fn query(&self, request: &InferenceRequest, node: &QaNode) -> Result<InferenceResponse, BackendError> {
        let answer = stub_answer(node, &request.frame_id, &self.mode)?;
        Ok(InferenceResponse {
            node_id: request.node_id.clone(),
            answer,
            latency: Duration::ZERO,
            backend_id: self.id(),
        })
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    /// Worth retrying: connection failures, timeouts, 5xx, 429.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

/// Posts a JSON body and returns the response body.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, body: &str, timeout: Duration) -> Result<String, TransportError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    /// Forwarded verbatim, e.g. `("Authorization", "Bearer ...")`.
    header: Option<(String, String)>,
}

impl HttpTransport {
    pub fn new(header: Option<(String, String)>) -> anyhow::Result<Self> {
        Ok(Self {
            client: reqwest::blocking::Client::builder().build()?,
            header,
        })
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, body: &str, timeout: Duration) -> Result<String, TransportError> {
        let mut req = self
            .client
            .post(url)
            .timeout(timeout)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some((k, v)) = &self.header {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportError::Transient(e.to_string()))?;
        if status.is_success() {
            Ok(text)
        } else if status.is_server_error() || status.as_u16() == 429 {
            Err(TransportError::Transient(format!("HTTP {status}")))
        } else {
            Err(TransportError::Fatal(format!("HTTP {status}: {text}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            base_delay_ms: 200,
            max_delay_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Counting semaphore.
pub struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    frame_id: &'a str,
    node_id: &'a str,
    prompt: &'a str,
    images: BTreeMap<&'static str, &'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    node_id: String,
    answer: String,
}

pub fn encode_request(request: &InferenceRequest) -> String {
    let wire = WireRequest {
        frame_id: &request.frame_id,
        node_id: &request.node_id,
        prompt: &request.prompt,
        images: request.image_refs.iter().map(|(c, p)| (c.name(), p.as_str())).collect(),
    };
    serde_json::to_string(&wire).expect("request always serializes")
}

pub struct RemoteBackend<T: Transport> {
    pub url: String,
    transport: T,
    pub retry: RetryPolicy,
    limiter: Limiter,
}

impl<T: Transport> RemoteBackend<T> {
    pub fn new(url: impl Into<String>, transport: T, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            url: url.into(),
            transport,
            retry,
            limiter: Limiter::new(max_in_flight),
        }
    }
}

impl<T: Transport> Backend for RemoteBackend<T> {
    fn id(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn query(&self, request: &InferenceRequest, _node: &QaNode) -> Result<InferenceResponse, BackendError> {
        request.check().map_err(BackendError::Rejected)?;
        let body = encode_request(request);
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.limiter.acquire();
                self.transport.post(&self.url, &body, request.timeout)
            };
            match result {
                Ok(text) => {
                    let wire: WireResponse =
                        serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("{e}: {text}")))?;
                    if wire.node_id != request.node_id {
                        return Err(BackendError::Protocol(format!(
                            "response for `{}` to request for `{}`",
                            wire.node_id, request.node_id
                        )));
                    }
                    return Ok(InferenceResponse {
                        node_id: wire.node_id,
                        answer: wire.answer,
                        latency: start.elapsed(),
                        backend_id: self.id(),
                    });
                }
                Err(TransportError::Fatal(e)) => return Err(BackendError::Rejected(e)),
                Err(TransportError::Transient(e)) => {
                    attempt += 1;
                    if attempt > self.retry.retries {
                        return Err(BackendError::Exhausted {
                            attempts: attempt,
                            last: e,
                        });
                    }
                    log::warn!("{}: attempt {attempt} failed ({e}), retrying", request.node_id);
                    thread::sleep(self.retry.delay(attempt));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gvqa_core::model::{ClosedAnswerRule, Stage};
    use gvqa_core::tag::Camera;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(node_id: &str) -> InferenceRequest {
        InferenceRequest {
            frame_id: "f".into(),
            node_id: node_id.into(),
            prompt: "Q?".into(),
            image_refs: Camera::ALL.iter().map(|c| (*c, format!("{c}.jpg"))).collect(),
            timeout: Duration::from_secs(1),
            attempt: 0,
        }
    }

    fn node() -> QaNode {
        QaNode::new(
            "f",
            0,
            Stage::Perception,
            "Q?",
            Some("No.".into()),
            &ClosedAnswerRule::default(),
        )
    }

    struct Scripted {
        replies: Mutex<Vec<Result<String, TransportError>>>,
        calls: AtomicUsize,
    }

    impl Transport for Scripted {
        fn post(&self, _: &str, _: &str, _: Duration) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            retries: 2,
            base_delay_ms: 1,
            max_delay_ms: 2,
        }
    }

    #[test]
    fn passes_answer_through() {
        let t = Scripted {
            replies: Mutex::new(vec![Ok(r#"{"node_id": "f#0", "answer": "  Yes, it is.  "}"#.into())]),
            calls: AtomicUsize::new(0),
        };
        let b = RemoteBackend::new("http://x", t, fast_retry(), 1);
        assert_eq!(b.query(&request("f#0"), &node()).unwrap().answer, "  Yes, it is.  ");
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let t = Scripted {
            replies: Mutex::new(vec![
                Err(TransportError::Transient("reset".into())),
                Err(TransportError::Transient("reset".into())),
                Ok(r#"{"node_id": "f#0", "answer": "ok"}"#.into()),
            ]),
            calls: AtomicUsize::new(0),
        };
        let b = RemoteBackend::new("http://x", t, fast_retry(), 1);
        assert_eq!(b.query(&request("f#0"), &node()).unwrap().answer, "ok");
        assert_eq!(b.transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_retries() {
        let t = Scripted {
            replies: Mutex::new((0..3).map(|_| Err(TransportError::Transient("down".into()))).collect()),
            calls: AtomicUsize::new(0),
        };
        let b = RemoteBackend::new("http://x", t, fast_retry(), 1);
        assert!(matches!(
            b.query(&request("f#0"), &node()),
            Err(BackendError::Exhausted { attempts: 3, .. })
        ));
    }

    #[test]
    fn malformed_and_mismatched_responses() {
        let t = Scripted {
            replies: Mutex::new(vec![
                Ok("not json".into()),
                Ok(r#"{"node_id": "f#9", "answer": "x"}"#.into()),
            ]),
            calls: AtomicUsize::new(0),
        };
        let b = RemoteBackend::new("http://x", t, fast_retry(), 1);
        assert!(matches!(
            b.query(&request("f#0"), &node()),
            Err(BackendError::Protocol(_))
        ));
        assert!(matches!(
            b.query(&request("f#0"), &node()),
            Err(BackendError::Protocol(_))
        ));
        assert_eq!(b.transport.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn rejects_incomplete_request() {
        let t = Scripted {
            replies: Mutex::new(vec![]),
            calls: AtomicUsize::new(0),
        };
        let b = RemoteBackend::new("http://x", t, fast_retry(), 1);
        let mut r = request("f#0");
        r.image_refs.remove(&Camera::Back);
        assert!(matches!(b.query(&r, &node()), Err(BackendError::Rejected(_))));
    }

    struct Instrumented {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Transport for Instrumented {
        fn post(&self, _: &str, body: &str, _: Duration) -> Result<String, TransportError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            let v: serde_json::Value = serde_json::from_str(body).unwrap();
            Ok(serde_json::json!({"node_id": v["node_id"], "answer": "ok"}).to_string())
        }
    }

    #[test]
    fn in_flight_requests_are_bounded() {
        let b = Arc::new(RemoteBackend::new(
            "http://x",
            Instrumented {
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            },
            fast_retry(),
            3,
        ));
        thread::scope(|s| {
            for i in 0..24 {
                let b = &b;
                s.spawn(move || b.query(&request(&format!("f#{i}")), &node()).unwrap());
            }
        });
        let peak = b.transport.peak.load(Ordering::SeqCst);
        assert!((1..=3).contains(&peak), "peak {peak}");
    }

    #[test]
    fn wire_request_shape() {
        let v: serde_json::Value = serde_json::from_str(&encode_request(&request("f#0"))).unwrap();
        assert_eq!(v["frame_id"], "f");
        assert_eq!(v["node_id"], "f#0");
        assert_eq!(v["prompt"], "Q?");
        assert_eq!(v["images"].as_object().unwrap().len(), 6);
        assert_eq!(v["images"]["CAM_BACK_LEFT"], "CAM_BACK_LEFT.jpg");
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            retries: 10,
            base_delay_ms: 100,
            max_delay_ms: 1000,
        };
        let ms: Vec<_> = (1..=6).map(|a| p.delay(a).as_millis()).collect();
        assert_eq!(ms, [100, 200, 400, 800, 1000, 1000]);
    }

    #[test]
    fn stub_echo() {
        let b = StubBackend { mode: StubMode::EchoGt };
        assert_eq!(b.query(&request("f#0"), &node()).unwrap().answer, "No.");
    }
}
