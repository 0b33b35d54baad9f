// SPDX-License-Identifier: Apache-2.0

//! Chat-completion generation backend over HTTP.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Capabilities, GenerationBackend};
use crate::error::{Error, Result};
use crate::operators::GenerationRequest;

/// Sends one JSON POST and returns `(status, body)`. `Err` is a transport
/// failure (connection refused, timeout, ...).
pub trait ChatTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> std::result::Result<(u16, String), String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::Config(format!("HTTP client: {e}")))?;
        Ok(Self { client })
    }
}

impl ChatTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> std::result::Result<(u16, String), String> {
        let mut req = self.client.post(url).json(body).timeout(timeout);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_max_concurrent() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpGenerationBackend {
    config: EndpointConfig,
    transport: Box<dyn ChatTransport>,
    slots: Semaphore,
}

impl HttpGenerationBackend {
    pub fn new(config: EndpointConfig, transport: Box<dyn ChatTransport>) -> Self {
        let slots = Semaphore::new(config.max_concurrent);
        Self {
            config,
            transport,
            slots,
        }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, request: &GenerationRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
        })
    }
}

fn extract_reply(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| Error::BackendProtocol(format!("response is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::BackendProtocol("response lacks choices[0].message.content".into()))
}

fn retryable(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

impl GenerationBackend for HttpGenerationBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String> {
        let body = self.request_body(request);
        let url = self.url();
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let attempts = self.config.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.config.retry.backoff(attempt - 1));
            }
            let outcome = {
                let _permit = self.slots.acquire();
                self.transport
                    .post_json(&url, self.config.api_key.as_deref(), &body, timeout)
            };
            match outcome {
                Ok((200..=299, text)) => return extract_reply(&text),
                Ok((status, text)) if retryable(status) => {
                    last_error = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
                }
                Ok((status, text)) => {
                    return Err(Error::BackendProtocol(format!(
                        "HTTP {status}: {}",
                        text.chars().take(200).collect::<String>()
                    )))
                }
                Err(e) => last_error = e,
            }
            log::debug!("generation attempt {} failed: {last_error}", attempt + 1);
        }
        Err(Error::BackendUnavailable(format!(
            "{attempts} attempts failed; last error: {last_error}"
        )))
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_prompt_chars: None,
            sampling_params: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{RequestKind, RequestMetadata, Sampling};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Scripted {
        replies: Mutex<Vec<std::result::Result<(u16, String), String>>>,
        calls: AtomicUsize,
        seen: Mutex<Vec<Value>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<std::result::Result<(u16, String), String>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self {
                replies: Mutex::new(replies),
                calls: AtomicUsize::new(0),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl ChatTransport for Arc<Scripted> {
        fn post_json(
            &self,
            _url: &str,
            _bearer: Option<&str>,
            body: &Value,
            _timeout: Duration,
        ) -> std::result::Result<(u16, String), String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen.lock().unwrap().push(body.clone());
            self.replies.lock().unwrap().pop().unwrap_or(Ok((500, "exhausted".into())))
        }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn backend(t: Arc<Scripted>, attempts: u32) -> HttpGenerationBackend {
        HttpGenerationBackend::new(
            EndpointConfig {
                base_url: "http://localhost:1/v1/".into(),
                model: "m".into(),
                api_key: Some("k".into()),
                timeout_secs: 5,
                max_concurrent: 2,
                retry: RetryPolicy {
                    max_attempts: attempts,
                    initial_backoff_ms: 1,
                    max_backoff_ms: 4,
                    multiplier: 2.0,
                },
            },
            Box::new(t),
        )
    }

    fn request() -> GenerationRequest {
        GenerationRequest {
            prompt: "write an adder".into(),
            sampling: Sampling::default(),
            metadata: RequestMetadata {
                kind: RequestKind::Repair,
                parent_ids: vec![],
                generation: 1,
                seed: 0,
            },
            parents: vec![],
        }
    }

    #[test]
    fn success_returns_text_and_sends_sampling() {
        let t = Scripted::new(vec![Ok((200, ok_body("```\nmodule a; endmodule\n```")))]);
        let b = backend(t.clone(), 3);
        assert_eq!(b.generate(&request()).unwrap(), "```\nmodule a; endmodule\n```");
        let body = &t.seen.lock().unwrap()[0];
        assert_eq!(body["temperature"], 0.8);
        assert_eq!(body["top_p"], 0.95);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["content"], "write an adder");
        assert_eq!(b.url(), "http://localhost:1/v1/chat/completions");
    }

    #[test]
    fn retries_rate_limits() {
        let t = Scripted::new(vec![
            Ok((429, "slow down".into())),
            Err("connection reset".into()),
            Ok((200, ok_body("done"))),
        ]);
        let b = backend(t.clone(), 5);
        assert_eq!(b.generate(&request()).unwrap(), "done");
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn persistent_server_error_exhausts_retries() {
        let t = Scripted::new(vec![]);
        let b = backend(t.clone(), 4);
        assert!(matches!(b.generate(&request()), Err(Error::BackendUnavailable(_))));
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn malformed_response_is_protocol_error() {
        let t = Scripted::new(vec![Ok((200, "{\"choices\": []}".into()))]);
        assert!(matches!(backend(t, 3).generate(&request()), Err(Error::BackendProtocol(_))));
        let t = Scripted::new(vec![Ok((400, "bad request".into()))]);
        assert!(matches!(backend(t.clone(), 3).generate(&request()), Err(Error::BackendProtocol(_))));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
            multiplier: 2.0,
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(1), Duration::from_millis(200));
        assert_eq!(p.backoff(2), Duration::from_millis(350));
    }

    #[test]
    fn concurrency_cap_is_enforced() {
        struct Slow {
            active: AtomicUsize,
            peak: AtomicUsize,
        }
        impl ChatTransport for Arc<Slow> {
            fn post_json(&self, _: &str, _: Option<&str>, _: &Value, _: Duration)
                -> std::result::Result<(u16, String), String> {
                let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                thread::sleep(Duration::from_millis(20));
                self.active.fetch_sub(1, Ordering::SeqCst);
                Ok((200, ok_body("x")))
            }
        }
        let slow = Arc::new(Slow { active: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let mut cfg = backend(Scripted::new(vec![]), 1).config.clone();
        cfg.max_concurrent = 2;
        let b = HttpGenerationBackend::new(cfg, Box::new(slow.clone()));
        thread::scope(|s| {
            for _ in 0..6 {
                s.spawn(|| b.generate(&request()).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }
}
