//! Minimal JSON-over-HTTP POST helper with a shared retry policy, used by
//! the chat-completion backend and the remote embedding provider.

use std::time::Duration;

#[derive(Debug)]
pub(crate) enum HttpFailure {
    /// Transport-level failure (connect, timeout) after all retries.
    Transport { attempts: u32, message: String },
    /// Final response was non-2xx.
    Status { status: u16, body: String },
}

pub(crate) struct Attempt {
    pub status: Option<u16>,
    pub body: String,
}

/// POSTs `body` as JSON, retrying transport errors, 429 and 5xx responses up
/// to `retries` additional attempts with doubling backoff. Every attempt is
/// reported through `on_attempt` (for audit logs) before the outcome is
/// decided.
pub(crate) fn post_json_with_retry(
    client: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
    retries: u32,
    mut on_attempt: impl FnMut(u32, &Attempt),
) -> Result<String, HttpFailure> {
    let mut last_transport = String::new();
    let mut last_status: Option<(u16, String)> = None;
    let mut attempts = 0;
    for attempt in 1..=retries.saturating_add(1) {
        if attempt > 1 {
            let backoff = Duration::from_millis(100u64 << (attempt - 2).min(5));
            std::thread::sleep(backoff);
        }
        attempts = attempt;
        let mut request = client.post(url).json(body);
        if let Some(token) = bearer {
            request = request.bearer_auth(token);
        }
        match request.send() {
            Err(e) => {
                let message = e.to_string();
                on_attempt(
                    attempt,
                    &Attempt {
                        status: None,
                        body: message.clone(),
                    },
                );
                last_transport = message;
            }
            Ok(response) => {
                let status = response.status().as_u16();
                let text = response.text().unwrap_or_default();
                on_attempt(
                    attempt,
                    &Attempt {
                        status: Some(status),
                        body: text.clone(),
                    },
                );
                if (200..300).contains(&status) {
                    return Ok(text);
                }
                let retryable = status == 429 || status >= 500;
                last_status = Some((status, text));
                if !retryable {
                    break;
                }
            }
        }
    }
    match last_status {
        Some((status, body)) => Err(HttpFailure::Status { status, body }),
        None => Err(HttpFailure::Transport {
            attempts,
            message: last_transport,
        }),
    }
}
