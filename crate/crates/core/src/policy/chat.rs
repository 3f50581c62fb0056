use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use super::{ChatTurn, Role};

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("request to {endpoint} failed after {attempts} attempts: {last}")]
    Exhausted {
        endpoint: String,
        attempts: u32,
        last: String,
    },
    #[error("endpoint {endpoint} rejected the request with status {status}: {body}")]
    Rejected {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    /// Delay before the first retry; doubled on each further retry.
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            initial_backoff: Duration::from_secs(1),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Counting semaphore shared by every client cloned from the same limit.
#[derive(Debug, Clone)]
pub struct ConcurrencyLimit {
    inner: Arc<(Mutex<usize>, Condvar)>,
}

impl ConcurrencyLimit {
    pub fn new(permits: usize) -> Self {
        Self {
            inner: Arc::new((Mutex::new(permits.max(1)), Condvar::new())),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let (lock, cvar) = &*self.inner;
        let mut free = lock.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = cvar.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Default for ConcurrencyLimit {
    fn default() -> Self {
        Self::new(8)
    }
}

struct Permit<'a>(&'a ConcurrencyLimit);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let (lock, cvar) = &*self.0.inner;
        *lock.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        cvar.notify_one();
    }
}

/// Blocking client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    limit: ConcurrencyLimit,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

enum Failure {
    Retryable(String),
    Fatal(ChatError),
}

impl ChatClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self::with_policy(
            endpoint,
            model,
            api_key,
            RetryPolicy::default(),
            ConcurrencyLimit::default(),
        )
    }

    pub fn with_policy(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
        limit: ConcurrencyLimit,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(retry.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: api_key.filter(|k| !k.is_empty()),
            retry,
            limit,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Same model, credentials and limits against another endpoint.
    pub fn with_endpoint(&self, endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            ..self.clone()
        }
    }

    /// Requests `n` completions. Backends that ignore `n` and return fewer
    /// choices are topped up with sequential single-sample calls.
    pub fn complete(&self, messages: &[ChatTurn], n: usize, temperature: f64) -> Result<Vec<String>, ChatError> {
        let n = n.max(1);
        let mut out = self.request(messages, n, temperature)?;
        while out.len() < n {
            let more = self.request(messages, 1, temperature)?;
            if more.is_empty() {
                return Err(ChatError::Malformed("no choices in response".into()));
            }
            out.extend(more);
        }
        out.truncate(n);
        Ok(out)
    }

    fn request(&self, messages: &[ChatTurn], n: usize, temperature: f64) -> Result<Vec<String>, ChatError> {
        let body = json!({
            "model": self.model,
            "messages": messages.iter().map(|t| json!({
                "role": match t.role {
                    Role::System => "system",
                    Role::Human => "user",
                    Role::Assistant => "assistant",
                },
                "content": t.content,
            })).collect::<Vec<Value>>(),
            "temperature": temperature,
            "n": n,
        });
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                log::warn!("retrying {} in {:?}: {last}", self.endpoint, backoff);
                thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(&body) {
                Ok(texts) => return Ok(texts),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => last = msg,
            }
        }
        Err(ChatError::Exhausted {
            endpoint: self.endpoint.clone(),
            attempts: self.retry.retries + 1,
            last,
        })
    }

    fn attempt(&self, body: &Value) -> Result<Vec<String>, Failure> {
        let _permit = self.limit.acquire();
        let url = format!("{}/chat/completions", self.endpoint);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("status {status}")));
        }
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(ChatError::Rejected {
                endpoint: self.endpoint.clone(),
                status,
                body,
            }));
        }
        let parsed: Completion = resp
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Fatal(ChatError::Malformed(e.to_string())))?;
        Ok(parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect())
    }
}
