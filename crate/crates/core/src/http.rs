//! Blocking JSON-over-HTTP transport shared by the remote embedding provider
//! and the chat client.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1000,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `retry` (0-based): doubles each time.
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(1u64 << retry.min(16)))
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    http: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl JsonClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(retry.timeout_ms))
            .build()
            .map_err(|e| Error::ProviderUnavailable(format!("http client: {e}")))?;
        Ok(JsonClient {
            http,
            endpoint: endpoint.into(),
            api_key,
            retry,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// POSTs `body`, retrying transport failures and non-success statuses
    /// with exponential backoff. The final failure becomes
    /// `ProviderUnavailable`.
    pub fn post(&self, body: &Value) -> Result<Value> {
        let attempts = self.retry.attempts.max(1);
        let mut last_err = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            let mut req = self.http.post(&self.endpoint).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .json::<Value>()
                        .map_err(|e| Error::MalformedResponse(format!("response body: {e}")));
                }
                Ok(resp) => last_err = format!("HTTP {}", resp.status()),
                Err(e) => last_err = e.to_string(),
            }
            tracing::warn!(endpoint = %self.endpoint, attempt, error = %last_err, "request failed");
        }
        Err(Error::ProviderUnavailable(format!(
            "{} after {attempts} attempts: {last_err}",
            self.endpoint
        )))
    }
}

/// Reads an API key from the environment, treating empty values as unset.
pub fn env_key(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

#[cfg(test)]
pub(crate) mod testing {
    //! Minimal scripted HTTP server for exercising the clients.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::thread::JoinHandle;

    pub struct Scripted {
        pub url: String,
        pub requests: Arc<Mutex<Vec<String>>>,
        handle: Option<JoinHandle<()>>,
    }

    impl Scripted {
        /// Serves each `(status, body)` in order, one per connection.
        pub fn serve(responses: Vec<(u16, String)>) -> Scripted {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let url = format!("http://{}/v1", listener.local_addr().unwrap());
            let requests = Arc::new(Mutex::new(Vec::new()));
            let seen = Arc::clone(&requests);
            let handle = std::thread::spawn(move || {
                for (status, body) in responses {
                    let (mut stream, _) = listener.accept().unwrap();
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut content_len = 0usize;
                    loop {
                        let mut line = String::new();
                        reader.read_line(&mut line).unwrap();
                        if line == "\r\n" || line.is_empty() {
                            break;
                        }
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            content_len = v.trim().parse().unwrap();
                        }
                    }
                    let mut buf = vec![0u8; content_len];
                    reader.read_exact(&mut buf).unwrap();
                    seen.lock().unwrap().push(String::from_utf8(buf).unwrap());
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    stream.write_all(reply.as_bytes()).unwrap();
                }
            });
            Scripted {
                url,
                requests,
                handle: Some(handle),
            }
        }

        pub fn finish(mut self) -> Vec<String> {
            if let Some(h) = self.handle.take() {
                h.join().unwrap();
            }
            self.requests.lock().unwrap().clone()
        }
    }
}
